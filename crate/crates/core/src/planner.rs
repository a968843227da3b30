//! The tractability classifier and pipeline assembler.
//!
//! [`classify`] is a pure function from (query, semiring, annotation profile)
//! to a certificate: either an executable plan with its rewrite chain, or the
//! reason no known pipeline applies, citing the blocking result. [`prepare`]
//! executes a tractable plan against the data and returns an engine with
//! uniform `get`/`count`.
//!
//! Decision order: the two-atom count shape gets its dedicated structure;
//! queries whose computed value is absent or last go through existential
//! elimination straight into the lexicographic index; orders with trailing
//! variables after the computed value try, in order, the monotone block
//! pipeline, the annotation-to-column pipeline for full locally annotated
//! queries, and — over ⊕-idempotent semirings — the anchored elimination
//! that keeps the database locally annotated.

use std::collections::BTreeMap;

use num::BigUint;
use serde_json::json;
use thiserror::Error;

use crate::access::{
    count_product_shape, AccessError, AccessStructure, CountProductStructure, MonotonePair, Weight,
};
use crate::consts::{ConstOrder, ConstTable};
use crate::db::Relation;
use crate::hypergraph::{self, Hypergraph, TrioWitness};
use crate::query::{AggFunc, HeadEntry, Query, Var};
use crate::rewrite::{self, RewriteStep};
use crate::semiring::{self, SemiringKind, SemiringSpec, SetDomain, Trop, Value};
use crate::translate::{self, TranslateError};
use crate::vdb::{AnnotationProfile, Cell, VDatabase};

/// Which pipeline a tractable query runs through.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PlanKind {
    StarLast,
    ZBlockMonotone,
    FullDeannotate(String),
    IdempotentLocal(String),
    CountProduct,
    MultiAggregateStarLast,
}

impl PlanKind {
    pub fn name(&self) -> &'static str {
        match self {
            PlanKind::StarLast => "StarLast",
            PlanKind::ZBlockMonotone => "ZBlockMonotone",
            PlanKind::FullDeannotate(_) => "FullDeannotate",
            PlanKind::IdempotentLocal(_) => "IdempotentLocal",
            PlanKind::CountProduct => "CountProduct",
            PlanKind::MultiAggregateStarLast => "MultiAggregateStarLast",
        }
    }
}

#[derive(Clone, Debug)]
pub struct Plan {
    pub kind: PlanKind,
    pub chain: Vec<RewriteStep>,
    pub theorem: &'static str,
}

/// Why a query is (believed) intractable.
#[derive(Clone, Debug)]
pub enum Witness {
    Trio(TrioWitness),
    Cyclic(Vec<std::collections::BTreeSet<Var>>),
    Condition(String),
}

#[derive(Clone, Debug)]
pub enum Verdict {
    Tractable(Plan),
    Intractable { witness: Witness, theorem: &'static str },
    Unknown { note: String },
}

#[derive(Clone, Debug)]
pub struct Certificate {
    pub verdict: Verdict,
}

impl Certificate {
    pub fn tractable(kind: PlanKind, chain: Vec<RewriteStep>, theorem: &'static str) -> Self {
        Certificate { verdict: Verdict::Tractable(Plan { kind, chain, theorem }) }
    }

    pub fn intractable(witness: Witness, theorem: &'static str) -> Self {
        Certificate { verdict: Verdict::Intractable { witness, theorem } }
    }

    pub fn unknown(note: impl Into<String>) -> Self {
        Certificate { verdict: Verdict::Unknown { note: note.into() } }
    }

    pub fn is_tractable(&self) -> bool {
        matches!(self.verdict, Verdict::Tractable(_))
    }

    pub fn plan(&self) -> Option<&Plan> {
        match &self.verdict {
            Verdict::Tractable(p) => Some(p),
            _ => None,
        }
    }

    pub fn theorem(&self) -> Option<&'static str> {
        match &self.verdict {
            Verdict::Tractable(p) => Some(p.theorem),
            Verdict::Intractable { theorem, .. } => Some(theorem),
            Verdict::Unknown { .. } => None,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        match &self.verdict {
            Verdict::Tractable(p) => json!({
                "verdict": "tractable",
                "plan": {
                    "kind": p.kind.name(),
                    "target": match &p.kind {
                        PlanKind::FullDeannotate(r) | PlanKind::IdempotentLocal(r) => json!(r),
                        _ => serde_json::Value::Null,
                    },
                    "chain": p.chain.iter().map(|s| s.to_string()).collect::<Vec<_>>(),
                },
                "theorem": p.theorem,
            }),
            Verdict::Intractable { witness, theorem } => json!({
                "verdict": "intractable",
                "witness": witness_json(witness),
                "theorem": theorem,
            }),
            Verdict::Unknown { note } => json!({
                "verdict": "unknown",
                "note": note,
            }),
        }
    }
}

fn witness_json(w: &Witness) -> serde_json::Value {
    match w {
        Witness::Trio(t) => json!({"kind": "DisruptiveTrio", "vars": [t.x1, t.x2, t.x3]}),
        Witness::Cyclic(residue) => json!({
            "kind": "Cyclic",
            "residue": residue
                .iter()
                .map(|e| e.iter().cloned().collect::<Vec<_>>())
                .collect::<Vec<_>>(),
        }),
        Witness::Condition(name) => json!({"kind": "Condition", "name": name}),
    }
}

/// Is the body acyclic and, with the free variables added, still acyclic?
struct Shape {
    acyclic: bool,
    free_connex: bool,
    trio: Option<TrioWitness>,
    body_residue: Vec<std::collections::BTreeSet<Var>>,
    connex_residue: Vec<std::collections::BTreeSet<Var>>,
}

fn shape_of(q: &Query) -> Shape {
    let h = Hypergraph::of_query(q);
    let (acyclic, body_residue) = match hypergraph::gyo_acyclic(&h) {
        Ok(_) => (true, Vec::new()),
        Err(w) => (false, w.residue),
    };
    let free: std::collections::BTreeSet<Var> = q.free_vars().into_iter().collect();
    let (free_connex, connex_residue) = if acyclic {
        match hypergraph::ext_connex_tree(&h, &free) {
            Ok(_) => (true, Vec::new()),
            Err(w) => (false, w.residue),
        }
    } else {
        (false, Vec::new())
    };
    Shape { acyclic, free_connex, trio: hypergraph::find_disruptive_trio(q), body_residue, connex_residue }
}

/// Steps of the star-last chain for a query, derived structurally.
fn elimination_chain(q: &Query) -> Vec<RewriteStep> {
    let mut chain = Vec::new();
    if !q.is_self_join_free() {
        chain.push(RewriteStep::SelfJoinSplit);
    }
    let h = Hypergraph::of_query(q);
    let free: std::collections::BTreeSet<Var> = q.free_vars().into_iter().collect();
    if let Ok(ext) = hypergraph::ext_connex_tree(&h, &free) {
        for (leaf, _) in rewrite::leaf_elimination_order(&ext) {
            let vars: Vec<Var> = ext.tree.nodes[leaf].vars.iter().cloned().collect();
            chain.push(RewriteStep::EliminateLeaf(format!("{{{}}}", vars.join(","))));
        }
    }
    chain
}

/// The blocking side of the base dichotomy, for queries whose computed value
/// is not in the order.
fn base_hardness(q: &Query, shape: &Shape) -> Certificate {
    if !q.is_self_join_free() {
        return Certificate::unknown("self-joins present and the query misses the tractable class");
    }
    if !shape.acyclic {
        Certificate::intractable(Witness::Cyclic(shape.body_residue.clone()), "Thm 4.2(2)/HYPERCLIQUE")
    } else if let Some(t) = &shape.trio {
        Certificate::intractable(Witness::Trio(t.clone()), "Thm 4.2(2)/SparseBMM")
    } else {
        Certificate::intractable(
            Witness::Cyclic(shape.connex_residue.clone()),
            "Thm 4.2(2)/SparseBMM",
        )
    }
}

/// Classifies a query over a semiring and an annotation profile. Handles
/// plain queries, star queries, and aggregate queries (the latter are
/// translated internally; the ambient semiring only supplies the set domain
/// for CountD). Pure and deterministic.
pub fn classify(q: &Query, s: &SemiringSpec, profile: &AnnotationProfile) -> Certificate {
    let computed = q.computed_entries();
    let aggs: Vec<(usize, AggFunc)> = computed
        .iter()
        .filter_map(|(i, e)| match e {
            HeadEntry::Agg { func, .. } => Some((*i, *func)),
            _ => None,
        })
        .collect();

    // Dedicated structure for the two-atom count shape.
    if count_product_shape(q).is_some() {
        return Certificate::tractable(PlanKind::CountProduct, Vec::new(), "Prop 5.4");
    }

    // Trailing multi-aggregate block: one structure per aggregate.
    if computed.len() > 1 {
        let grouping = q.drop_computed();
        let shape = shape_of(&grouping);
        for (_, func) in &aggs {
            if *func == AggFunc::CountD && set_domain_of(s).is_none() {
                return Certificate::intractable(
                    Witness::Condition("count-distinct without a bounded domain".into()),
                    "Thm 4.4",
                );
            }
        }
        if shape.free_connex && shape.trio.is_none() {
            return Certificate::tractable(
                PlanKind::MultiAggregateStarLast,
                elimination_chain(&grouping),
                "Cor 4.3 Remark",
            );
        }
        return base_hardness(&grouping, &shape);
    }

    // Single aggregate: translate to the star form for structural checks.
    let (q_star, eff_spec, eff_profile);
    match computed.first() {
        Some((_, HeadEntry::Agg { .. })) => {
            let translated = translate::translate_acq(q, set_domain_of(s));
            match translated {
                Ok((qs, kind, rule)) => {
                    eff_spec = semiring::instantiate(kind);
                    eff_profile = match &rule.carrier {
                        None => AnnotationProfile::AllOne,
                        Some(c) => AnnotationProfile::LocallyAnnotated(
                            c.projection
                                .as_ref()
                                .map(|p| p.new_relation.clone())
                                .unwrap_or_else(|| c.relation.clone()),
                        ),
                    };
                    q_star = qs;
                }
                Err(TranslateError::CountDWithoutDomain) => {
                    return Certificate::intractable(
                        Witness::Condition("count-distinct without a bounded domain".into()),
                        "Thm 4.4",
                    );
                }
                Err(e) => {
                    return Certificate::unknown(format!("aggregate translation failed: {e}"));
                }
            }
        }
        _ => {
            q_star = q.clone();
            eff_spec = s.clone();
            eff_profile = profile.clone();
        }
    }

    let shape = shape_of(&q_star);
    let star = q_star.star_position();
    let star_last = star.map_or(true, |p| p == q_star.head.len() - 1);

    if star_last {
        if shape.free_connex && shape.trio.is_none() {
            return Certificate::tractable(
                PlanKind::StarLast,
                elimination_chain(&q_star),
                "Thm 4.2(1)",
            );
        }
        return base_hardness(&q_star, &shape);
    }

    // Interior star from here on.
    let z_vars = q_star.vars_after_star();
    debug_assert!(!z_vars.is_empty());

    // Monotone block pipeline: every atom carries the whole trailing block or
    // none of it.
    if eff_spec.times_monotone && shape.free_connex && shape.trio.is_none() {
        let z_block_ok = q_star.body.iter().all(|a| {
            let vars = hypergraph::atom_vars(a);
            z_vars.iter().all(|z| vars.contains(z)) || z_vars.iter().all(|z| !vars.contains(z))
        });
        if z_block_ok {
            let mut chain = elimination_chain(&q_star);
            chain.push(RewriteStep::FullReduce);
            chain.push(RewriteStep::ExtendY(String::new()));
            return Certificate::tractable(PlanKind::ZBlockMonotone, chain, "Thm 5.5");
        }
    }

    // Locally annotated pipelines.
    let carriers: Vec<String> = match &eff_profile {
        AnnotationProfile::LocallyAnnotated(r) if q_star.body.iter().any(|a| &a.relation == r) => {
            vec![r.clone()]
        }
        AnnotationProfile::LocallyAnnotated(_) | AnnotationProfile::AllOne => {
            q_star.body.iter().map(|a| a.relation.clone()).collect()
        }
        AnnotationProfile::General => Vec::new(),
    };

    if !carriers.is_empty() && q_star.is_self_join_free() {
        if q_star.is_full() {
            // Annotation becomes a column; the deannotated order must be in
            // the tractable class.
            let mut first_failure: Option<Certificate> = None;
            for r in &carriers {
                let (q_r, _) = match rewrite::deannotate(&q_star, r) {
                    Ok(v) => v,
                    Err(_) => continue,
                };
                let sh = shape_of(&q_r);
                if sh.acyclic && sh.trio.is_none() {
                    return Certificate::tractable(
                        PlanKind::FullDeannotate(r.clone()),
                        vec![
                            RewriteStep::FullReduce,
                            RewriteStep::AnnotationToColumn(r.clone()),
                            RewriteStep::Deannotate(r.clone()),
                        ],
                        "Thm 5.7(1)",
                    );
                }
                if first_failure.is_none() {
                    first_failure = Some(match sh.trio {
                        Some(t) => Certificate::intractable(Witness::Trio(t), "Thm 5.7(2)"),
                        None => Certificate::intractable(
                            Witness::Cyclic(sh.body_residue),
                            "Thm 5.7(2)",
                        ),
                    });
                }
            }
            if let Some(c) = first_failure {
                return c;
            }
        } else if eff_spec.plus_idempotent && shape.free_connex {
            // Anchored elimination keeps the database locally annotated; test
            // the deannotation of the eliminated shape.
            let mut first_failure: Option<Certificate> = None;
            for r in &carriers {
                let Some(phi) = q_star.body.iter().position(|a| &a.relation == r) else {
                    continue;
                };
                let Ok(ext) = hypergraph::anchored_ext_tree(&q_star, phi) else { continue };
                let body = rewrite::eliminated_atoms(&q_star, &ext);
                let full_shape =
                    Query { name: q_star.name.clone(), head: q_star.head.clone(), body };
                let adj = ext.tree.adjacency();
                let v = ext
                    .tree
                    .nodes
                    .iter()
                    .position(|n| n.origin == hypergraph::NodeOrigin::Atom(phi))
                    .unwrap();
                let path = hypergraph::path_to_marked(&ext, &adj, v);
                let root = *path.last().unwrap();
                let root_pos = (0..root).filter(|i| ext.marked.contains(i)).count();
                let r_prime = full_shape.body[root_pos].relation.clone();
                let (q_0, _) = match rewrite::deannotate(&full_shape, &r_prime) {
                    Ok(v) => v,
                    Err(_) => continue,
                };
                let sh = shape_of(&q_0);
                if sh.acyclic && sh.trio.is_none() {
                    let mut chain: Vec<RewriteStep> = ext
                        .tree
                        .nodes
                        .iter()
                        .enumerate()
                        .filter(|(i, _)| !ext.marked.contains(i))
                        .map(|(_, n)| {
                            let vars: Vec<Var> = n.vars.iter().cloned().collect();
                            RewriteStep::EliminateLeaf(format!("{{{}}}", vars.join(",")))
                        })
                        .collect();
                    chain.push(RewriteStep::FullReduce);
                    chain.push(RewriteStep::AnnotationToColumn(r_prime.clone()));
                    chain.push(RewriteStep::Deannotate(r_prime));
                    return Certificate::tractable(
                        PlanKind::IdempotentLocal(r.clone()),
                        chain,
                        "Thm 5.9(1)",
                    );
                }
                if first_failure.is_none() {
                    first_failure = Some(match sh.trio {
                        Some(t) => Certificate::intractable(Witness::Trio(t), "Thm 5.9(2)"),
                        None => Certificate::intractable(
                            Witness::Cyclic(sh.body_residue),
                            "Thm 5.9(2)",
                        ),
                    });
                }
            }
            if let Some(c) = first_failure {
                return c;
            }
        }
    }

    // Generic-profile hardness.
    let named_semiring = matches!(
        eff_spec.kind,
        SemiringKind::Counting | SemiringKind::Numeric | SemiringKind::MinTropical | SemiringKind::MaxTropical
    );
    if star == Some(0)
        && q_star.head.len() == 3
        && q_star.body.len() == 2
        && q_star.body.iter().all(|a| a.terms.len() == 1)
        && q_star.is_self_join_free()
        && q_star.body[0].terms[0] != q_star.body[1].terms[0]
        && named_semiring
    {
        return Certificate::intractable(
            Witness::Condition("annotation-first order over a binary product".into()),
            "Thm 5.1",
        );
    }
    if !shape.acyclic && q_star.is_self_join_free() {
        return Certificate::intractable(
            Witness::Cyclic(shape.body_residue.clone()),
            "Thm 4.2(2)/HYPERCLIQUE",
        );
    }
    if (!shape.free_connex || shape.trio.is_some()) && q_star.is_self_join_free() {
        return match shape.trio {
            Some(t) => Certificate::intractable(Witness::Trio(t), "Thm 4.2(2)/SparseBMM"),
            None => Certificate::intractable(
                Witness::Cyclic(shape.connex_residue.clone()),
                "Thm 4.2(2)/SparseBMM",
            ),
        };
    }
    Certificate::unknown("no applicable pipeline for this order and annotation profile")
}

fn set_domain_of(s: &SemiringSpec) -> Option<&SetDomain> {
    match &s.kind {
        SemiringKind::SetSemiring(d) => Some(d),
        _ => None,
    }
}

// ---------------------------------------------------------------------------
// Engines
// ---------------------------------------------------------------------------

#[derive(Debug, Error)]
pub enum PrepareError {
    #[error("query is not tractable: {0}")]
    NotTractable(String),
    #[error(transparent)]
    Access(#[from] AccessError),
    #[error(transparent)]
    Rewrite(#[from] rewrite::RewriteError),
    #[error(transparent)]
    Translate(#[from] TranslateError),
    #[error("engine misuse: {0}")]
    Misuse(String),
}

/// How a computed value is shown in answers: raw semiring value, or the
/// aggregate's presentation of it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Present {
    Raw,
    TropToNum,
    SetCard,
    AvgRatio,
}

impl Present {
    fn for_agg(func: AggFunc) -> Present {
        match func {
            AggFunc::Count | AggFunc::Sum => Present::Raw,
            AggFunc::Min | AggFunc::Max => Present::TropToNum,
            AggFunc::CountD => Present::SetCard,
            AggFunc::Avg => Present::AvgRatio,
        }
    }

    fn apply(&self, v: &Value) -> Value {
        match self {
            Present::Raw => semiring::canonical_for_order(v),
            Present::TropToNum => match v {
                Value::MinTrop(Trop::Finite(q)) | Value::MaxTrop(Trop::Finite(q)) => {
                    Value::Num(q.clone())
                }
                _ => panic!("aggregate produced an infinite tropical value"),
            },
            Present::SetCard => match v {
                Value::Set(mask) => Value::Count(BigUint::from(mask.count_ones())),
                _ => panic!("count-distinct expects a set value"),
            },
            Present::AvgRatio => match v.avg_ratio() {
                Some(r) => Value::Num(r),
                None => panic!("average of an empty group"),
            },
        }
    }
}

/// Maps a structure answer back into the original head order.
struct Remap {
    /// For each original head position: source position in the structure
    /// answer.
    source: Vec<usize>,
    /// Presentation for computed positions.
    present: Vec<Option<Present>>,
}

impl Remap {
    fn identity(head: &[HeadEntry], present: Option<Present>) -> Remap {
        Remap {
            source: (0..head.len()).collect(),
            present: head
                .iter()
                .map(|e| if e.is_computed() { Some(present.unwrap_or(Present::Raw)) } else { None })
                .collect(),
        }
    }

    fn apply(&self, row: Vec<Cell>) -> Vec<Cell> {
        self.source
            .iter()
            .zip(self.present.iter())
            .map(|(&s, p)| match (p, &row[s]) {
                (Some(pr), Cell::Val(v)) => Cell::val(pr.apply(v)),
                (_, c) => c.clone(),
            })
            .collect()
    }
}

enum EngineInner<W: Weight> {
    Lex { structure: AccessStructure<W>, remap: Remap },
    Monotone { pair: MonotonePair<W>, remap: Remap },
    CountProduct(CountProductStructure<W>),
    /// Sum and count structures over the same grouping order; answers divide.
    AvgPaired { sum: AccessStructure<W>, count: AccessStructure<W>, star: usize },
    /// One engine per trailing aggregate, stitched positionally.
    Multi { subs: Vec<Engine<W>>, positions: Vec<usize>, head_len: usize },
}

/// A prepared, immutable engine serving direct access to one query's answers.
pub struct Engine<W: Weight> {
    inner: EngineInner<W>,
}

impl<W: Weight> Engine<W> {
    pub fn count(&self) -> BigUint {
        match &self.inner {
            EngineInner::Lex { structure, .. } => structure.count(),
            EngineInner::Monotone { pair, .. } => pair.count(),
            EngineInner::CountProduct(s) => s.count(),
            EngineInner::AvgPaired { sum, .. } => sum.count(),
            EngineInner::Multi { subs, .. } => subs[0].count(),
        }
    }

    /// The i-th answer (1-based), or `None` past the end.
    pub fn get(&self, i: &BigUint) -> Result<Option<Vec<Cell>>, AccessError> {
        match &self.inner {
            EngineInner::Lex { structure, remap } => {
                Ok(structure.access(i)?.map(|row| remap.apply(row)))
            }
            EngineInner::Monotone { pair, remap } => Ok(pair.access(i)?.map(|row| remap.apply(row))),
            EngineInner::CountProduct(s) => s.access(i),
            EngineInner::AvgPaired { sum, count, star } => {
                let Some(srow) = sum.access(i)? else { return Ok(None) };
                let crow = count.access(i)?.expect("sum and count structures agree");
                let mut row = srow;
                let (Cell::Val(sv), Cell::Val(cv)) = (&row[*star], &crow[*star]) else {
                    panic!("computed cells expected");
                };
                let (Value::Num(total), Value::Count(n)) = (sv.as_ref(), cv.as_ref()) else {
                    panic!("avg expects numeric sum and count");
                };
                let denom = num::BigRational::from_integer(
                    num::BigInt::from_biguint(num::bigint::Sign::Plus, n.clone()),
                );
                row[*star] = Cell::val(Value::Num(total / denom));
                Ok(Some(row))
            }
            EngineInner::Multi { subs, positions, head_len } => {
                let Some(first) = subs[0].get(i)? else { return Ok(None) };
                let mut row: Vec<Cell> = Vec::with_capacity(*head_len);
                // Grouping variables lead; computed values trail.
                let var_count = head_len - positions.len();
                row.extend(first[..var_count].iter().cloned());
                row.push(first[var_count].clone());
                for sub in subs.iter().skip(1) {
                    let srow = sub.get(i)?.expect("aggregate structures agree on grouping");
                    debug_assert_eq!(&srow[..var_count], &row[..var_count]);
                    row.push(srow[var_count].clone());
                }
                Ok(Some(row))
            }
        }
    }

    pub fn stats(&self) -> serde_json::Value {
        match &self.inner {
            EngineInner::Lex { structure, .. } => structure.stats(),
            EngineInner::Monotone { pair, .. } => pair.stats(),
            EngineInner::CountProduct(s) => s.stats(),
            EngineInner::AvgPaired { sum, count, .. } => json!({
                "sum": sum.stats(), "count": count.stats(),
            }),
            EngineInner::Multi { subs, .. } => {
                json!(subs.iter().map(|s| s.stats()).collect::<Vec<_>>())
            }
        }
    }
}

/// Everything `prepare` needs: the parsed query, the loaded relations, raw
/// annotation literals (star mode), and the ambient semiring.
pub struct Job<'a> {
    pub query: &'a Query,
    pub relations: &'a BTreeMap<String, Relation>,
    pub raw_annots: &'a BTreeMap<String, Vec<String>>,
    pub semiring: SemiringSpec,
    pub consts: &'a ConstTable,
    /// Direct database override for star queries, bypassing the raw
    /// annotation columns.
    pub star_db: Option<&'a VDatabase>,
}

impl Job<'_> {
    /// The annotated database a star query runs over.
    pub fn star_database(&self) -> Result<VDatabase, TranslateError> {
        if let Some(db) = self.star_db {
            return Ok(db.clone());
        }
        translate::annotate_raw(self.relations, self.raw_annots, &self.semiring)
    }

    /// Profile used for classification.
    pub fn profile(&self) -> AnnotationProfile {
        match self.star_database() {
            Ok(db) => AnnotationProfile::of(&db),
            Err(_) => AnnotationProfile::General,
        }
    }

    pub fn classify(&self) -> Certificate {
        let has_agg =
            self.query.head.iter().any(|e| matches!(e, HeadEntry::Agg { .. }));
        let profile =
            if has_agg { AnnotationProfile::AllOne } else { self.profile() };
        classify(self.query, &self.semiring, &profile)
    }
}

/// Builds the engine for a classified tractable job.
pub fn prepare<W: Weight>(job: &Job<'_>, cert: &Certificate) -> Result<Engine<W>, PrepareError> {
    let plan = cert
        .plan()
        .ok_or_else(|| PrepareError::NotTractable(format!("{:?}", cert.verdict)))?;
    let order = job.consts.ranks();
    build_plan(job, &plan.kind, &order)
}

fn build_plan<W: Weight>(
    job: &Job<'_>,
    kind: &PlanKind,
    order: &ConstOrder,
) -> Result<Engine<W>, PrepareError> {
    let q = job.query;
    match kind {
        PlanKind::CountProduct => {
            let db = job.star_database()?;
            let s = CountProductStructure::build(q, &db, order)?;
            Ok(Engine { inner: EngineInner::CountProduct(s) })
        }
        PlanKind::StarLast => {
            let agg = single_agg(q);
            match agg {
                Some((_, AggFunc::Avg)) => build_avg_paired(job, order),
                Some((_, func)) => {
                    let (q_star, kindr, rule) =
                        translate::translate_acq(q, set_domain_of(&job.semiring))?;
                    let spec = semiring::instantiate(kindr);
                    let db = translate::annotate_with_rule(job.relations, &rule, &spec, job.consts)?;
                    let engine = build_star_last::<W>(&q_star, &db, order)?;
                    Ok(Engine {
                        inner: with_remap(engine, Remap::identity(&q.head, Some(Present::for_agg(func)))),
                    })
                }
                None => {
                    let db = job.star_database()?;
                    let engine = build_star_last::<W>(q, &db, order)?;
                    Ok(Engine { inner: with_remap(engine, Remap::identity(&q.head, None)) })
                }
            }
        }
        PlanKind::MultiAggregateStarLast => {
            let grouping: Vec<HeadEntry> =
                q.head.iter().filter(|e| !e.is_computed()).cloned().collect();
            let positions: Vec<usize> = q
                .head
                .iter()
                .enumerate()
                .filter(|(_, e)| e.is_computed())
                .map(|(i, _)| i)
                .collect();
            let mut subs = Vec::new();
            for &p in &positions {
                let mut head = grouping.clone();
                head.push(q.head[p].clone());
                let sub_q = Query { name: q.name.clone(), head, body: q.body.clone() };
                let sub_job = Job {
                    query: &sub_q,
                    relations: job.relations,
                    raw_annots: job.raw_annots,
                    semiring: job.semiring.clone(),
                    consts: job.consts,
                    star_db: job.star_db,
                };
                let sub = build_plan(&sub_job, &PlanKind::StarLast, order)?;
                subs.push(sub);
            }
            Ok(Engine {
                inner: EngineInner::Multi { subs, positions, head_len: q.head.len() },
            })
        }
        PlanKind::ZBlockMonotone => {
            let (q_star, db, present) = star_form(job)?;
            let elim = rewrite::eliminate_existentials(&q_star, &db)?;
            let red = rewrite::full_reduce(&elim.query, &elim.db)?;
            let pair = MonotonePair::build(&elim.query, &red, order)?;
            let remap = Remap::identity(&q_star.head, Some(present));
            Ok(Engine { inner: EngineInner::Monotone { pair, remap } })
        }
        PlanKind::FullDeannotate(r) => {
            let (q_star, db, present) = star_form(job)?;
            let red = rewrite::full_reduce(&q_star, &db)?;
            let (q_r, y, db2) =
                rewrite::extend_with_annotation_var(&q_star, r, &red, &move |v| {
                    present.apply(&semiring::canonical_for_order(v))
                })?;
            let structure = AccessStructure::build(&q_r, &db2, order, None)?;
            let remap = deannotated_remap(&q_star, &q_r, &y);
            Ok(Engine { inner: EngineInner::Lex { structure, remap } })
        }
        PlanKind::IdempotentLocal(r) => {
            let (q_star, db, present) = star_form(job)?;
            let (elim, r2) = rewrite::idempotent_eliminate(&q_star, r, &db)?;
            let red = rewrite::full_reduce(&elim.query, &elim.db)?;
            let (q_r, y, db2) =
                rewrite::extend_with_annotation_var(&elim.query, &r2, &red, &move |v| {
                    present.apply(&semiring::canonical_for_order(v))
                })?;
            let structure = AccessStructure::build(&q_r, &db2, order, None)?;
            let remap = deannotated_remap(&q_star, &q_r, &y);
            Ok(Engine { inner: EngineInner::Lex { structure, remap } })
        }
    }
}

fn single_agg(q: &Query) -> Option<(usize, AggFunc)> {
    let mut it = q.head.iter().enumerate().filter_map(|(i, e)| match e {
        HeadEntry::Agg { func, .. } => Some((i, *func)),
        _ => None,
    });
    match (it.next(), it.next()) {
        (Some(x), None) => Some(x),
        _ => None,
    }
}

/// Star query, its annotated database and presentation, for either query
/// form.
fn star_form(job: &Job<'_>) -> Result<(Query, VDatabase, Present), PrepareError> {
    match single_agg(job.query) {
        Some((_, func)) => {
            let (q_star, kind, rule) =
                translate::translate_acq(job.query, set_domain_of(&job.semiring))?;
            let spec = semiring::instantiate(kind);
            let db = translate::annotate_with_rule(job.relations, &rule, &spec, job.consts)?;
            Ok((q_star, db, Present::for_agg(func)))
        }
        None => Ok((job.query.clone(), job.star_database()?, Present::Raw)),
    }
}

fn with_remap<W: Weight>(engine: Engine<W>, remap: Remap) -> EngineInner<W> {
    match engine.inner {
        EngineInner::Lex { structure, .. } => EngineInner::Lex { structure, remap },
        other => other,
    }
}

/// Star-last pipeline: eliminate existentials, then index.
fn build_star_last<W: Weight>(
    q_star: &Query,
    db: &VDatabase,
    order: &ConstOrder,
) -> Result<Engine<W>, PrepareError> {
    let elim = rewrite::eliminate_existentials(q_star, db)?;
    let structure = AccessStructure::build(&elim.query, &elim.db, order, None)?;
    let remap = Remap::identity(&q_star.head, Some(Present::Raw));
    Ok(Engine { inner: EngineInner::Lex { structure, remap } })
}

fn build_avg_paired<W: Weight>(job: &Job<'_>, order: &ConstOrder) -> Result<Engine<W>, PrepareError> {
    let q = job.query;
    let (star, arg) = q
        .head
        .iter()
        .enumerate()
        .find_map(|(i, e)| match e {
            HeadEntry::Agg { func: AggFunc::Avg, arg } => Some((i, arg.clone())),
            _ => None,
        })
        .expect("avg plan needs an avg entry");
    let arg = arg.expect("avg takes an argument");
    let mk = |func: AggFunc, arg: Option<Var>| -> Query {
        let mut head = q.head.clone();
        head[star] = HeadEntry::Agg { func, arg };
        Query { name: q.name.clone(), head, body: q.body.clone() }
    };
    let build = |q_agg: &Query| -> Result<AccessStructure<W>, PrepareError> {
        let (q_star, kind, rule) = translate::translate_acq(q_agg, None)?;
        let spec = semiring::instantiate(kind);
        let db = translate::annotate_with_rule(job.relations, &rule, &spec, job.consts)?;
        let elim = rewrite::eliminate_existentials(&q_star, &db)?;
        Ok(AccessStructure::build(&elim.query, &elim.db, order, None)?)
    };
    let sum = build(&mk(AggFunc::Sum, Some(arg.clone())))?;
    let count = build(&mk(AggFunc::Count, None))?;
    Ok(Engine { inner: EngineInner::AvgPaired { sum, count, star } })
}

/// Mapping from a deannotated query's answers back to the original head.
fn deannotated_remap(q_star: &Query, q_r: &Query, y: &Var) -> Remap {
    let pos_of = |v: &Var| -> usize {
        q_r.head
            .iter()
            .position(|e| matches!(e, HeadEntry::Var(w) if w == v))
            .expect("variable present in deannotated head")
    };
    let source: Vec<usize> = q_star
        .head
        .iter()
        .map(|e| match e {
            HeadEntry::Var(v) => pos_of(v),
            _ => pos_of(y),
        })
        .collect();
    let present = q_star
        .head
        .iter()
        .map(|e| if e.is_computed() { Some(Present::Raw) } else { None })
        .collect();
    // The y column already carries presented values; keep them as-is.
    Remap { source, present }
}

/// Weight-mode dispatch: checked word-sized counts by default, arbitrary
/// precision on request.
pub enum EngineAny {
    Small(Engine<u64>),
    Big(Engine<BigUint>),
}

impl EngineAny {
    pub fn build(job: &Job<'_>, cert: &Certificate, bigint: bool) -> Result<EngineAny, PrepareError> {
        if bigint {
            Ok(EngineAny::Big(prepare::<BigUint>(job, cert)?))
        } else {
            Ok(EngineAny::Small(prepare::<u64>(job, cert)?))
        }
    }

    pub fn count(&self) -> BigUint {
        match self {
            EngineAny::Small(e) => e.count(),
            EngineAny::Big(e) => e.count(),
        }
    }

    pub fn get(&self, i: &BigUint) -> Result<Option<Vec<Cell>>, AccessError> {
        match self {
            EngineAny::Small(e) => e.get(i),
            EngineAny::Big(e) => e.get(i),
        }
    }

    pub fn stats(&self) -> serde_json::Value {
        match self {
            EngineAny::Small(e) => e.stats(),
            EngineAny::Big(e) => e.stats(),
        }
    }
}
