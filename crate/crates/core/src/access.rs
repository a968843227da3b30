//! The runtime index structures behind direct access.
//!
//! [`AccessStructure`] serves a full acyclic query with no disruptive trio:
//! variables are eliminated from the last head position backwards, each stage
//! recording, per assignment of the variable's earlier neighbours, the sorted
//! candidate values with cumulative answer counts and an accumulated
//! annotation. An access call walks the stages left to right, binary-searching
//! the prefix sums to decode the index, and multiplies the selected
//! annotations into the computed value.
//!
//! [`MonotonePair`] wraps three such structures to serve orders where the
//! computed value sits before trailing variables, and
//! [`CountProductStructure`] serves the count-ordered two-atom shape with
//! per-value occurrence buckets.

use std::collections::HashMap;

use num::{BigUint, One, Zero};
use thiserror::Error;

use crate::consts::ConstOrder;
use crate::hypergraph::{self, Hypergraph, TrioWitness};
use crate::query::{Atom, HeadEntry, Query, Var};
use crate::semiring::{self, Direction, SemiringSpec, Value};
use crate::vdb::{Cell, CellCmp, VDatabase};

/// Counts above this bound overflow the default (word-sized) weight mode.
pub const WEIGHT_LIMIT: u64 = 1 << 63;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AccessError {
    #[error("query must be full (head variables only)")]
    NotFull,
    #[error("query head order has a disruptive trio ({0}, {1}, {2})")]
    DisruptiveTrio(String, String, String),
    #[error("query is cyclic")]
    Cyclic,
    #[error("answer count exceeds 2^63; rebuild with big weights")]
    WeightOverflow,
    #[error("index must be at least 1")]
    IndexOutOfRange,
    #[error("count-product structure requires the two-atom count shape")]
    BadCountShape,
    #[error(transparent)]
    Rewrite(#[from] crate::rewrite::RewriteError),
    #[error("semiring is not ⊗-monotone")]
    NotMonotone,
}

/// Answer-count arithmetic: checked word-sized weights by default, arbitrary
/// precision behind the `--bigint` switch.
pub trait Weight: Clone + Ord + std::fmt::Debug {
    fn zero() -> Self;
    fn one() -> Self;
    fn checked_add(&self, other: &Self) -> Option<Self>;
    fn checked_mul(&self, other: &Self) -> Option<Self>;
    fn sub(&self, other: &Self) -> Self;
    fn from_biguint(n: &BigUint) -> Option<Self>;
    fn to_biguint(&self) -> BigUint;
    fn is_zero(&self) -> bool;
}

impl Weight for u64 {
    fn zero() -> Self {
        0
    }
    fn one() -> Self {
        1
    }
    fn checked_add(&self, other: &Self) -> Option<Self> {
        u64::checked_add(*self, *other).filter(|&v| v <= WEIGHT_LIMIT)
    }
    fn checked_mul(&self, other: &Self) -> Option<Self> {
        u64::checked_mul(*self, *other).filter(|&v| v <= WEIGHT_LIMIT)
    }
    fn sub(&self, other: &Self) -> Self {
        self - other
    }
    fn from_biguint(n: &BigUint) -> Option<Self> {
        u64::try_from(n).ok().filter(|&v| v <= WEIGHT_LIMIT)
    }
    fn to_biguint(&self) -> BigUint {
        BigUint::from(*self)
    }
    fn is_zero(&self) -> bool {
        *self == 0
    }
}

impl Weight for BigUint {
    fn zero() -> Self {
        <BigUint as Zero>::zero()
    }
    fn one() -> Self {
        <BigUint as One>::one()
    }
    fn checked_add(&self, other: &Self) -> Option<Self> {
        Some(self + other)
    }
    fn checked_mul(&self, other: &Self) -> Option<Self> {
        Some(self * other)
    }
    fn sub(&self, other: &Self) -> Self {
        self - other
    }
    fn from_biguint(n: &BigUint) -> Option<Self> {
        Some(n.clone())
    }
    fn to_biguint(&self) -> BigUint {
        self.clone()
    }
    fn is_zero(&self) -> bool {
        Zero::is_zero(self)
    }
}

struct Entry<W> {
    value: Cell,
    /// Cumulative weight up to and including this entry.
    cum: W,
    annot: Value,
}

struct Stage<W> {
    /// Stage indices of the variable's earlier neighbours, sorted.
    ctx: Vec<usize>,
    buckets: HashMap<Vec<Cell>, Vec<Entry<W>>>,
    /// Later stages whose weight tables multiply into counts at this stage.
    multipliers: Vec<usize>,
}

impl<W: Weight> Stage<W> {
    fn bucket_total(&self, key: &[Cell]) -> Option<&W> {
        self.buckets.get(key).map(|b| &b.last().expect("buckets are nonempty").cum)
    }
}

/// Immutable direct-access index for one full acyclic query.
pub struct AccessStructure<W> {
    head: Vec<HeadEntry>,
    /// Head position of each variable stage.
    head_pos: Vec<usize>,
    stages: Vec<Stage<W>>,
    star_pos: Option<usize>,
    /// ⊗-product of annotations of variable-free atoms.
    base_annot: Value,
    total: W,
    semiring: SemiringSpec,
}

/// Orientation per head variable; `None` means ascending everywhere.
pub type Directions = Option<Vec<Direction>>;

impl<W: Weight> AccessStructure<W> {
    /// Preprocessing: builds the index in O(n log n).
    pub fn build(
        q: &Query,
        db: &VDatabase,
        order: &ConstOrder,
        directions: Directions,
    ) -> Result<AccessStructure<W>, AccessError> {
        if !q.is_full() {
            return Err(AccessError::NotFull);
        }
        let h = Hypergraph::of_query(q);
        if hypergraph::gyo_acyclic(&h).is_err() {
            return Err(AccessError::Cyclic);
        }
        if let Some(TrioWitness { x1, x2, x3 }) = hypergraph::find_disruptive_trio(q) {
            return Err(AccessError::DisruptiveTrio(x1, x2, x3));
        }

        let vars: Vec<Var> = q.free_vars();
        let k = vars.len();
        let stage_of: HashMap<&Var, usize> =
            vars.iter().enumerate().map(|(i, v)| (v, i)).collect();
        let dirs = directions.unwrap_or_else(|| vec![Direction::NonDecreasing; k]);
        assert_eq!(dirs.len(), k);

        let spec = db.semiring.clone();
        let cmp = CellCmp { order, semiring: &spec };

        // Alive atoms: original keyed tables plus derived stage references.
        enum Alive {
            Original { map: HashMap<Vec<Cell>, Value> },
            Derived(usize),
        }
        let mut alive: Vec<(Vec<usize>, Option<Alive>)> = Vec::new();
        let mut base_annot = spec.one.clone();
        let mut base_zero = false;
        for atom in &q.body {
            let rel = db.rel(&atom.relation);
            let mut layout: Vec<usize> = atom
                .var_set()
                .iter()
                .map(|v| stage_of[*v])
                .collect();
            layout.sort_unstable();
            if layout.is_empty() {
                // Variable-free atom: a global filter contributing a constant
                // annotation factor.
                if rel.is_empty() {
                    base_zero = true;
                } else {
                    base_annot = semiring::times(&spec, &base_annot, &rel.tau[0]);
                }
                continue;
            }
            let dvars: Vec<&Var> = {
                let mut vs = atom.var_set();
                vs.sort_by_key(|v| stage_of[*v]);
                vs
            };
            let mut map: HashMap<Vec<Cell>, Value> = HashMap::new();
            for (row, tau) in rel.rows.iter().zip(rel.tau.iter()) {
                if let Some(key) = keyed(atom, &dvars, row) {
                    map.insert(key, tau.clone());
                }
            }
            alive.push((layout, Some(Alive::Original { map })));
        }

        let mut stages: Vec<Option<Stage<W>>> = (0..k).map(|_| None).collect();
        for s in (0..k).rev() {
            // Members of this stage: alive atoms containing variable s.
            let members: Vec<usize> =
                (0..alive.len()).filter(|&i| alive[i].1.is_some() && alive[i].0.contains(&s)).collect();
            debug_assert!(!members.is_empty(), "variable {} occurs in no atom", vars[s]);
            let mut ctx: Vec<usize> = members
                .iter()
                .flat_map(|&i| alive[i].0.iter().copied())
                .filter(|&t| t != s)
                .collect::<std::collections::BTreeSet<_>>()
                .into_iter()
                .collect();
            ctx.sort_unstable();
            debug_assert!(ctx.iter().all(|&t| t < s));
            let mut full_layout = ctx.clone();
            full_layout.push(s);
            full_layout.sort_unstable();

            let covering = members
                .iter()
                .copied()
                .find(|&i| full_layout.iter().all(|t| alive[i].0.contains(t)))
                .expect("no disruptive trio guarantees a covering atom per stage");

            // Enumerate the covering atom's keys, filter against the other
            // members, and accumulate weight and annotation.
            let mut buckets: HashMap<Vec<Cell>, Vec<(Cell, W, Value)>> = HashMap::new();
            let cov_rows: Vec<Vec<Cell>> = match alive[covering].1.as_ref().unwrap() {
                Alive::Original { map } => map.keys().cloned().collect(),
                Alive::Derived(j) => {
                    stages[*j].as_ref().unwrap().buckets.keys().cloned().collect()
                }
            };
            let vpos = full_layout.binary_search(&s).unwrap();
            'rows: for row in cov_rows {
                let mut g = W::one();
                let mut annot = spec.one.clone();
                for &m in &members {
                    let (m_layout, m_state) = (&alive[m].0, alive[m].1.as_ref().unwrap());
                    let key = proj(&full_layout, &row, m_layout);
                    match m_state {
                        Alive::Original { map } => match map.get(&key) {
                            Some(tau) => annot = semiring::times(&spec, &annot, tau),
                            None => continue 'rows,
                        },
                        Alive::Derived(j) => {
                            match stages[*j].as_ref().unwrap().bucket_total(&key) {
                                Some(w) => {
                                    g = g.checked_mul(w).ok_or(AccessError::WeightOverflow)?
                                }
                                None => continue 'rows,
                            }
                        }
                    }
                }
                let kappa = proj(&full_layout, &row, &ctx);
                buckets.entry(kappa).or_default().push((row[vpos].clone(), g, annot));
            }

            // Sort each bucket under the stage direction and accumulate.
            let mut done: HashMap<Vec<Cell>, Vec<Entry<W>>> = HashMap::with_capacity(buckets.len());
            for (kappa, mut rows) in buckets {
                rows.sort_by(|a, b| {
                    let c = cmp.cmp(&a.0, &b.0);
                    match dirs[s] {
                        Direction::NonDecreasing => c,
                        Direction::NonIncreasing => c.reverse(),
                    }
                });
                let mut cum = W::zero();
                let mut entries = Vec::with_capacity(rows.len());
                for (value, g, annot) in rows {
                    cum = cum.checked_add(&g).ok_or(AccessError::WeightOverflow)?;
                    entries.push(Entry { value, cum: cum.clone(), annot });
                }
                done.insert(kappa, entries);
            }

            for &m in &members {
                alive[m].1 = None;
            }
            alive.push((ctx.clone(), Some(Alive::Derived(s))));
            stages[s] = Some(Stage { ctx, buckets: done, multipliers: Vec::new() });
        }

        let mut stages: Vec<Stage<W>> = stages.into_iter().map(Option::unwrap).collect();
        // Later stages whose context closes before stage s multiply into its
        // counts during access.
        for s in 0..k {
            let mult: Vec<usize> = (s + 1..k)
                .filter(|&j| stages[j].ctx.iter().all(|&t| t < s))
                .collect();
            stages[s].multipliers = mult;
        }

        let mut total = if base_zero { W::zero() } else { W::one() };
        for stage in stages.iter().filter(|st| st.ctx.is_empty()) {
            let t = stage.bucket_total(&[]).cloned().unwrap_or_else(W::zero);
            total = total.checked_mul(&t).ok_or(AccessError::WeightOverflow)?;
        }
        if k == 0 && base_zero {
            total = W::zero();
        }

        let head_pos: Vec<usize> = q
            .head
            .iter()
            .enumerate()
            .filter(|(_, e)| matches!(e, HeadEntry::Var(_)))
            .map(|(i, _)| i)
            .collect();

        Ok(AccessStructure {
            head: q.head.clone(),
            head_pos,
            stages,
            star_pos: q.star_position(),
            base_annot,
            total,
            semiring: spec,
        })
    }

    /// Number of answers.
    pub fn count(&self) -> BigUint {
        self.total.to_biguint()
    }

    /// The i-th answer (1-based) in the head's lexicographic order, or `None`
    /// past the end. Runs in O(log n).
    pub fn access(&self, i: &BigUint) -> Result<Option<Vec<Cell>>, AccessError> {
        if Zero::is_zero(i) {
            return Err(AccessError::IndexOutOfRange);
        }
        let Some(iw) = W::from_biguint(i) else { return Ok(None) };
        if self.total < iw {
            return Ok(None);
        }
        let mut r = iw.sub(&W::one());

        let k = self.stages.len();
        let mut chosen: Vec<Option<Cell>> = vec![None; k];
        let mut annot = self.base_annot.clone();
        for s in 0..k {
            let stage = &self.stages[s];
            let kappa: Vec<Cell> =
                stage.ctx.iter().map(|&t| chosen[t].clone().expect("earlier stage chosen")).collect();
            let bucket = stage
                .buckets
                .get(&kappa)
                .expect("prefix of a counted answer has a bucket");
            let mut mult = W::one();
            for &j in &stage.multipliers {
                let key: Vec<Cell> = self.stages[j]
                    .ctx
                    .iter()
                    .map(|&t| chosen[t].clone().expect("earlier stage chosen"))
                    .collect();
                let w = self.stages[j]
                    .bucket_total(&key)
                    .expect("prefix of a counted answer has a bucket");
                mult = mult.checked_mul(w).ok_or(AccessError::WeightOverflow)?;
            }
            // First entry whose cumulative count exceeds the residual.
            let e = bucket.partition_point(|entry| {
                entry.cum.checked_mul(&mult).map_or(false, |c| c <= r)
            });
            debug_assert!(e < bucket.len());
            if e > 0 {
                let skipped = bucket[e - 1].cum.checked_mul(&mult).expect("bounded by total");
                r = r.sub(&skipped);
            }
            chosen[s] = Some(bucket[e].value.clone());
            annot = semiring::times(&self.semiring, &annot, &bucket[e].annot);
        }

        let mut row: Vec<Cell> = Vec::with_capacity(self.head.len());
        let mut var_iter = 0usize;
        for (i, entry) in self.head.iter().enumerate() {
            if matches!(entry, HeadEntry::Var(_)) {
                debug_assert_eq!(self.head_pos[var_iter], i);
                row.push(chosen[var_iter].clone().unwrap());
                var_iter += 1;
            } else {
                debug_assert_eq!(Some(i), self.star_pos);
                row.push(Cell::val(annot.clone()));
            }
        }
        Ok(Some(row))
    }

    /// Validates the internal prefix-sum layout: every bucket's cumulative
    /// weights strictly increase, buckets are nonempty, and the totals of the
    /// context-free stages multiply to the answer count.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut root_product = W::one();
        for (s, stage) in self.stages.iter().enumerate() {
            for (key, bucket) in &stage.buckets {
                if bucket.is_empty() {
                    return Err(format!("stage {s} has an empty bucket {key:?}"));
                }
                let mut prev: Option<&W> = None;
                for e in bucket {
                    if let Some(p) = prev {
                        if &e.cum <= p {
                            return Err(format!("stage {s} cumulative weights not increasing"));
                        }
                    }
                    prev = Some(&e.cum);
                }
            }
            if stage.ctx.is_empty() {
                let t = stage.bucket_total(&[]).cloned().unwrap_or_else(W::zero);
                root_product = root_product
                    .checked_mul(&t)
                    .ok_or_else(|| "root product overflow".to_string())?;
            }
        }
        if !self.stages.is_empty() && root_product != self.total {
            return Err(format!("root buckets {root_product:?} != total {:?}", self.total));
        }
        Ok(())
    }

    /// Structure statistics for the bench harness.
    pub fn stats(&self) -> serde_json::Value {
        let sizes: Vec<usize> = self.stages.iter().map(|s| s.buckets.len()).collect();
        serde_json::json!({
            "sizes": sizes,
            "total": self.total.to_biguint().to_string(),
            "depth": self.stages.len(),
        })
    }
}

/// Key of a relation row under an atom, cells listed per `dvars`; `None` when
/// a repeated variable binds two different cells.
fn keyed(atom: &Atom, dvars: &[&Var], row: &[Cell]) -> Option<Vec<Cell>> {
    let mut key: Vec<Option<&Cell>> = vec![None; dvars.len()];
    for (t, c) in atom.terms.iter().zip(row.iter()) {
        let i = dvars.iter().position(|v| *v == t).expect("term is a distinct var");
        match key[i] {
            None => key[i] = Some(c),
            Some(prev) if prev == c => {}
            Some(_) => return None,
        }
    }
    Some(key.into_iter().map(|c| c.unwrap().clone()).collect())
}

/// Projects a row laid out over `from` (sorted stage indices) onto `to`.
fn proj(from: &[usize], row: &[Cell], to: &[usize]) -> Vec<Cell> {
    to.iter()
        .map(|t| {
            let i = from.binary_search(t).expect("projection target inside layout");
            row[i].clone()
        })
        .collect()
}

/// Per-atom lookup from x⃗-assignments to the annotation of the unique
/// agreeing fact; used to evaluate the leading factor of an answer's
/// annotation at access time.
struct BeforeLookup {
    /// Stage indices (within the x⃗ prefix) per atom term.
    term_stages: Vec<usize>,
    map: HashMap<Vec<Cell>, Value>,
}

/// Direct access for a full star query with trailing variables after the
/// star, over a ⊗-monotone semiring: two oriented structures plus a plain
/// one for blocks whose leading annotation factor is 0̄ (where the product
/// collapses and ties are broken by the trailing variables alone).
pub struct MonotonePair<W> {
    forward: AccessStructure<W>,
    backward: AccessStructure<W>,
    zero_tail: AccessStructure<W>,
    before: Vec<BeforeLookup>,
    /// Head of the original query (x⃗, ★, z⃗).
    head: Vec<HeadEntry>,
    star_pos: usize,
    /// Position of the order variable inside the extended head.
    y_stage: usize,
    semiring: SemiringSpec,
}

impl<W: Weight> MonotonePair<W> {
    /// Builds the pair for a full acyclic trio-free star query whose atoms
    /// contain all trailing variables or none. The database must be fully
    /// reduced.
    pub fn build(
        q_full: &Query,
        db: &VDatabase,
        order: &ConstOrder,
    ) -> Result<MonotonePair<W>, AccessError> {
        if !db.semiring.times_monotone {
            return Err(AccessError::NotMonotone);
        }
        let star_pos = q_full.star_position().expect("interior star");
        let ext = crate::rewrite::extend_with_y(q_full, db, &semiring::canonical_for_order)?;

        let vars = ext.query.free_vars();
        let y_stage = vars.iter().position(|v| v == &ext.y).unwrap();
        let k = vars.len();
        let mut dirs = vec![Direction::NonDecreasing; k];
        let forward = AccessStructure::build(&ext.query, &ext.db, order, Some(dirs.clone()))?;
        dirs[y_stage] = Direction::NonIncreasing;
        let backward = AccessStructure::build(&ext.query, &ext.db, order, Some(dirs))?;

        // Plain structure on (x⃗, z⃗, ★): same variable order, so the same
        // trio-freeness; serves blocks with an annihilating leading factor.
        let mut tail_head: Vec<HeadEntry> = q_full
            .head
            .iter()
            .filter(|e| !e.is_computed())
            .cloned()
            .collect();
        tail_head.push(HeadEntry::Star);
        let q_tail = Query { name: q_full.name.clone(), head: tail_head, body: q_full.body.clone() };
        let zero_tail = AccessStructure::build(&q_tail, db, order, None)?;

        let stage_of: HashMap<&Var, usize> =
            vars.iter().enumerate().map(|(i, v)| (v, i)).collect();
        let mut before = Vec::new();
        for atom in &ext.before_atoms {
            let rel = db.rel(&atom.relation);
            let term_stages: Vec<usize> = atom.terms.iter().map(|t| stage_of[t]).collect();
            let mut map = HashMap::new();
            for (row, tau) in rel.rows.iter().zip(rel.tau.iter()) {
                map.insert(row.clone(), tau.clone());
            }
            before.push(BeforeLookup { term_stages, map });
        }

        Ok(MonotonePair {
            forward,
            backward,
            zero_tail,
            before,
            head: q_full.head.clone(),
            star_pos,
            y_stage,
            semiring: db.semiring.clone(),
        })
    }

    pub fn count(&self) -> BigUint {
        self.forward.count()
    }

    /// The i-th answer in the order (x⃗, ★, z⃗).
    pub fn access(&self, i: &BigUint) -> Result<Option<Vec<Cell>>, AccessError> {
        let Some(fwd) = self.forward.access(i)? else { return Ok(None) };
        // The leading annotation factor is fixed by the x⃗ assignment, which
        // all three structures agree on at this index.
        let mut c_before = self.semiring.one.clone();
        for b in &self.before {
            let key: Vec<Cell> = b.term_stages.iter().map(|&s| fwd[s].clone()).collect();
            let tau = b.map.get(&key).expect("reduced database has the agreeing fact");
            c_before = semiring::times(&self.semiring, &c_before, tau);
        }

        let picked: Vec<Cell>;
        if self.semiring.is_zero(&c_before) {
            // The whole block carries ★ = 0̄; order degenerates to the
            // trailing variables.
            let tail = self.zero_tail.access(i)?.expect("same answer count");
            // tail is (x⃗, z⃗, ★): reinsert the star at its position.
            let mut row: Vec<Cell> = Vec::with_capacity(self.head.len());
            let star_cell = tail.last().unwrap().clone();
            let mut it = tail.into_iter();
            for (pos, _) in self.head.iter().enumerate() {
                if pos == self.star_pos {
                    row.push(star_cell.clone());
                } else {
                    row.push(it.next().unwrap());
                }
            }
            return Ok(Some(row));
        } else {
            let dir = semiring::monotone_direction(&self.semiring, &c_before)
                .map_err(|_| AccessError::NotMonotone)?;
            picked = match dir {
                Direction::NonDecreasing => fwd,
                Direction::NonIncreasing => {
                    self.backward.access(i)?.expect("same answer count")
                }
            };
        }

        // picked is (x⃗, y, z⃗, ★): drop y, move ★ to its interior position.
        let star_cell = picked.last().unwrap().clone();
        let mut cells: Vec<Cell> = Vec::with_capacity(self.head.len());
        for (s, cell) in picked.iter().enumerate().take(picked.len() - 1) {
            if s == self.y_stage {
                continue;
            }
            cells.push(cell.clone());
        }
        let mut row: Vec<Cell> = Vec::with_capacity(self.head.len());
        let mut it = cells.into_iter();
        for pos in 0..self.head.len() {
            if pos == self.star_pos {
                row.push(star_cell.clone());
            } else {
                row.push(it.next().unwrap());
            }
        }
        Ok(Some(row))
    }

    pub fn stats(&self) -> serde_json::Value {
        serde_json::json!({
            "forward": self.forward.stats(),
            "backward": self.backward.stats(),
            "zero_tail": self.zero_tail.stats(),
        })
    }
}

struct CpBucket<W> {
    count: u64,
    left_class: usize,
    right_class: usize,
    cum: W,
}

/// Direct access for `Q(Count(), x, y) :- R(x, w), S(y, z)` ordered by the
/// count: values are grouped by occurrence count, buckets are pairs of count
/// classes sorted by the product (ties by the left count), and an index is
/// decoded as row-major position inside the bucket.
pub struct CountProductStructure<W> {
    buckets: Vec<CpBucket<W>>,
    left_lists: Vec<(u64, Vec<Cell>)>,
    right_lists: Vec<(u64, Vec<Cell>)>,
    total: W,
}

impl<W: Weight> CountProductStructure<W> {
    pub fn build(
        q: &Query,
        db: &VDatabase,
        order: &ConstOrder,
    ) -> Result<CountProductStructure<W>, AccessError> {
        let shape = count_product_shape(q).ok_or(AccessError::BadCountShape)?;
        let cmp = CellCmp { order, semiring: &db.semiring };
        let classes = |rel_name: &str| -> Vec<(u64, Vec<Cell>)> {
            let rel = db.rel(rel_name);
            let mut counts: HashMap<Cell, u64> = HashMap::new();
            for row in &rel.rows {
                *counts.entry(row[0].clone()).or_insert(0) += 1;
            }
            let mut by_count: HashMap<u64, Vec<Cell>> = HashMap::new();
            for (cell, c) in counts {
                by_count.entry(c).or_default().push(cell);
            }
            let mut out: Vec<(u64, Vec<Cell>)> = by_count.into_iter().collect();
            for (_, list) in out.iter_mut() {
                list.sort_by(|a, b| cmp.cmp(a, b));
            }
            out.sort_by_key(|(c, _)| *c);
            out
        };
        let left_lists = classes(&shape.0);
        let right_lists = classes(&shape.1);

        let mut pairs: Vec<(u64, usize, usize)> = Vec::new();
        for (i, (c, _)) in left_lists.iter().enumerate() {
            for (j, (cp, _)) in right_lists.iter().enumerate() {
                pairs.push((c * cp, i, j));
            }
        }
        pairs.sort_by_key(|&(p, i, _)| (p, left_lists[i].0));

        let mut buckets = Vec::with_capacity(pairs.len());
        let mut cum = W::zero();
        for (p, i, j) in pairs {
            let size = BigUint::from(left_lists[i].1.len()) * BigUint::from(right_lists[j].1.len());
            let size = W::from_biguint(&size).ok_or(AccessError::WeightOverflow)?;
            cum = cum.checked_add(&size).ok_or(AccessError::WeightOverflow)?;
            buckets.push(CpBucket { count: p, left_class: i, right_class: j, cum: cum.clone() });
        }
        Ok(CountProductStructure { buckets, left_lists, right_lists, total: cum })
    }

    pub fn count(&self) -> BigUint {
        self.total.to_biguint()
    }

    /// Bucket products in order, for inspection.
    pub fn bucket_products(&self) -> Vec<u64> {
        self.buckets.iter().map(|b| b.count).collect()
    }

    pub fn access(&self, i: &BigUint) -> Result<Option<Vec<Cell>>, AccessError> {
        if Zero::is_zero(i) {
            return Err(AccessError::IndexOutOfRange);
        }
        let Some(iw) = W::from_biguint(i) else { return Ok(None) };
        if self.total < iw {
            return Ok(None);
        }
        let b = self.buckets.partition_point(|b| b.cum < iw);
        let bucket = &self.buckets[b];
        let prev = if b == 0 { W::zero() } else { self.buckets[b - 1].cum.clone() };
        let offset = iw.sub(&prev).sub(&W::one()); // 0-based inside the bucket
        let right = &self.right_lists[bucket.right_class].1;
        // Row-major: x advances once per full sweep of y.
        let off = offset.to_biguint();
        let rl = BigUint::from(right.len());
        let x_idx = usize::try_from(&off / &rl).unwrap();
        let y_idx = usize::try_from(&off % &rl).unwrap();
        let x = self.left_lists[bucket.left_class].1[x_idx].clone();
        let y = right[y_idx].clone();
        Ok(Some(vec![Cell::val(Value::Count(BigUint::from(bucket.count))), x, y]))
    }

    pub fn stats(&self) -> serde_json::Value {
        serde_json::json!({
            "sizes": [self.buckets.len()],
            "total": self.total.to_biguint().to_string(),
            "depth": 1,
        })
    }
}

/// Recognizes `Q(Count(), x, y) :- R(x, w), S(y, z)` with distinct private
/// existentials; returns the two relation names in head-variable order.
pub fn count_product_shape(q: &Query) -> Option<(String, String)> {
    if q.head.len() != 3 {
        return None;
    }
    if !matches!(&q.head[0], HeadEntry::Agg { func: crate::query::AggFunc::Count, arg: None }) {
        return None;
    }
    let (HeadEntry::Var(x), HeadEntry::Var(y)) = (&q.head[1], &q.head[2]) else { return None };
    if q.body.len() != 2 {
        return None;
    }
    let find = |head_var: &Var| -> Option<(usize, &Atom)> {
        q.body
            .iter()
            .enumerate()
            .find(|(_, a)| a.terms.len() == 2 && &a.terms[0] == head_var)
    };
    let (i, ax) = find(x)?;
    let (j, ay) = find(y)?;
    if i == j {
        return None;
    }
    let (w, z) = (&ax.terms[1], &ay.terms[1]);
    if w == z || w == x || w == y || z == x || z == y {
        return None;
    }
    Some((ax.relation.clone(), ay.relation.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::consts::ConstTable;
    use crate::db::load_relation_str;
    use crate::parse::parse_query;
    use crate::semiring::{instantiate, SemiringKind};
    use crate::vdb::VRelation;

    fn plain_db(
        consts: &mut ConstTable,
        kind: SemiringKind,
        rels: &[(&str, usize, &str)],
    ) -> VDatabase {
        let spec = instantiate(kind);
        let mut db = VDatabase::new(spec.clone());
        for (name, arity, text) in rels {
            let (rel, _) = load_relation_str(text, name, *arity, false, consts).unwrap();
            let tau = vec![spec.one.clone(); rel.len()];
            db.relations.insert(name.to_string(), VRelation::from_relation(&rel, tau));
        }
        db
    }

    fn collect(s: &AccessStructure<u64>) -> Vec<Vec<Cell>> {
        let n = u64::try_from(s.count()).unwrap();
        (1..=n).map(|i| s.access(&BigUint::from(i)).unwrap().unwrap()).collect()
    }

    #[test]
    fn cartesian_product_order() {
        let q = parse_query("Q(x,y) :- R(x), S(y).").unwrap();
        let mut consts = ConstTable::new();
        let db = plain_db(&mut consts, SemiringKind::Counting, &[("R", 1, "2\n1"), ("S", 1, "6\n5")]);
        let order = consts.ranks();
        let s: AccessStructure<u64> = AccessStructure::build(&q, &db, &order, None).unwrap();
        assert_eq!(s.count(), BigUint::from(4u32));
        let names: Vec<Vec<String>> = collect(&s)
            .into_iter()
            .map(|row| {
                row.into_iter().map(|c| consts.name(c.as_const().unwrap()).to_string()).collect()
            })
            .collect();
        assert_eq!(names, vec![
            vec!["1", "5"], vec!["1", "6"], vec!["2", "5"], vec!["2", "6"],
        ]);
        assert!(s.access(&BigUint::from(5u32)).unwrap().is_none());
        assert!(s.access(&BigUint::from(0u32)).is_err());
    }

    #[test]
    fn unary_annotated_structure() {
        // Continuation of the elimination example: (1)↦3, (2)↦2.
        let q = parse_query("Q(x,*) :- R(x).").unwrap();
        let mut consts = ConstTable::new();
        let spec = instantiate(SemiringKind::Counting);
        let mut db = VDatabase::new(spec.clone());
        let mut rel = VRelation::empty(1);
        rel.push(vec![Cell::Const(consts.intern("1"))], Value::count(3));
        rel.push(vec![Cell::Const(consts.intern("2"))], Value::count(2));
        db.relations.insert("R".into(), rel);
        let order = consts.ranks();
        let s: AccessStructure<u64> = AccessStructure::build(&q, &db, &order, None).unwrap();
        assert_eq!(s.count(), BigUint::from(2u32));
        let a1 = s.access(&BigUint::from(1u32)).unwrap().unwrap();
        assert_eq!(a1[1], Cell::val(Value::count(3)));
        let a2 = s.access(&BigUint::from(2u32)).unwrap().unwrap();
        assert_eq!(a2[1], Cell::val(Value::count(2)));
    }

    #[test]
    fn empty_relation_gives_zero() {
        let q = parse_query("Q(x,y) :- R(x), S(y).").unwrap();
        let mut consts = ConstTable::new();
        let db = plain_db(&mut consts, SemiringKind::Counting, &[("R", 1, "1"), ("S", 1, "")]);
        let order = consts.ranks();
        let s: AccessStructure<u64> = AccessStructure::build(&q, &db, &order, None).unwrap();
        assert_eq!(s.count(), BigUint::from(0u32));
        assert!(s.access(&BigUint::from(1u32)).unwrap().is_none());
    }

    #[test]
    fn trio_and_cycle_are_rejected() {
        let q = parse_query("Q(a,b,c) :- R(a,c), S(b,c).").unwrap();
        let mut consts = ConstTable::new();
        let db =
            plain_db(&mut consts, SemiringKind::Counting, &[("R", 2, "1,2"), ("S", 2, "3,2")]);
        let order = consts.ranks();
        let r: Result<AccessStructure<u64>, _> = AccessStructure::build(&q, &db, &order, None);
        assert!(matches!(r, Err(AccessError::DisruptiveTrio(..))));

        let q = parse_query("Q(a,b,c) :- R(a,b), S(b,c), T(c,a).").unwrap();
        let db = plain_db(
            &mut consts,
            SemiringKind::Counting,
            &[("R", 2, "1,2"), ("S", 2, "2,3"), ("T", 2, "3,1")],
        );
        let order = consts.ranks();
        let r: Result<AccessStructure<u64>, _> = AccessStructure::build(&q, &db, &order, None);
        assert!(matches!(r, Err(AccessError::Cyclic)));
    }

    #[test]
    fn overflow_padding_counts() {
        // 2^16 per relation over four relations = 2^64 answers: overflows the
        // checked mode, fine with big weights.
        let q = parse_query("Q(a,b,c,d) :- R(a), S(b), T(c), U(d).").unwrap();
        let mut consts = ConstTable::new();
        let spec = instantiate(SemiringKind::Counting);
        let mut db = VDatabase::new(spec.clone());
        for name in ["R", "S", "T", "U"] {
            let mut rel = VRelation::empty(1);
            for i in 0..(1u32 << 16) {
                rel.push(vec![Cell::Const(consts.intern(&format!("{name}{i}")))], spec.one.clone());
            }
            db.relations.insert(name.to_string(), rel);
        }
        let order = consts.ranks();
        let r: Result<AccessStructure<u64>, _> = AccessStructure::build(&q, &db, &order, None);
        assert!(matches!(r, Err(AccessError::WeightOverflow)));
        let big: AccessStructure<BigUint> = AccessStructure::build(&q, &db, &order, None).unwrap();
        assert_eq!(big.count(), BigUint::from(1u128 << 64));
    }

    #[test]
    fn count_product_example() {
        // Left counts: a:1, b:2, c:3; right counts: a':1, b':1, c':2, d':2.
        let q = parse_query("Q(Count(),x,y) :- R(x,w), S(y,z).").unwrap();
        let mut consts = ConstTable::new();
        let db = plain_db(
            &mut consts,
            SemiringKind::Counting,
            &[
                ("R", 2, "a,1\nb,1\nb,2\nc,1\nc,2\nc,3"),
                ("S", 2, "ap,1\nbp,1\ncp,1\ncp,2\ndp,1\ndp,2"),
            ],
        );
        let order = consts.ranks();
        let s: CountProductStructure<u64> = CountProductStructure::build(&q, &db, &order).unwrap();
        assert_eq!(s.bucket_products(), vec![1, 2, 2, 3, 4, 6]);
        assert_eq!(s.count(), BigUint::from(12u32));
        let first = s.access(&BigUint::from(1u32)).unwrap().unwrap();
        assert_eq!(first[0], Cell::val(Value::count(1)));
        assert_eq!(consts.name(first[1].as_const().unwrap()), "a");
        assert_eq!(consts.name(first[2].as_const().unwrap()), "ap");
        let last = s.access(&BigUint::from(12u32)).unwrap().unwrap();
        assert_eq!(last[0], Cell::val(Value::count(6)));
        assert_eq!(consts.name(last[1].as_const().unwrap()), "c");
        assert_eq!(consts.name(last[2].as_const().unwrap()), "dp");
        assert!(s.access(&BigUint::from(13u32)).unwrap().is_none());
    }

    #[test]
    fn count_product_single_pair() {
        let q = parse_query("Q(Count(),x,y) :- R(x,w), S(y,z).").unwrap();
        let mut consts = ConstTable::new();
        let db = plain_db(
            &mut consts,
            SemiringKind::Counting,
            &[("R", 2, "a,1\na,2"), ("S", 2, "b,1")],
        );
        let order = consts.ranks();
        let s: CountProductStructure<u64> = CountProductStructure::build(&q, &db, &order).unwrap();
        assert_eq!(s.count(), BigUint::from(1u32));
        let a = s.access(&BigUint::from(1u32)).unwrap().unwrap();
        assert_eq!(a[0], Cell::val(Value::count(2)));
    }

    #[test]
    fn count_product_shape_rejects_shared_existential() {
        let q = parse_query("Q(Count(),x,y) :- R(x,w), S(y,w).").unwrap();
        assert!(count_product_shape(&q).is_none());
        let q = parse_query("Q(Count(),x,y) :- R(x,w), S(y,z).").unwrap();
        assert_eq!(count_product_shape(&q), Some(("R".into(), "S".into())));
    }

    #[test]
    fn monotone_pair_numeric_example() {
        // R = {1↦2, 2↦−1}, S = {5↦3, 6↦1}: within x=1 ascending by product,
        // within x=2 descending input order flips.
        let q = parse_query("Q(x,*,y) :- R(x), S(y).").unwrap();
        let mut consts = ConstTable::new();
        let spec = instantiate(SemiringKind::Numeric);
        let mut db = VDatabase::new(spec.clone());
        let mut r = VRelation::empty(1);
        r.push(vec![Cell::Const(consts.intern("1"))], Value::num_int(2));
        r.push(vec![Cell::Const(consts.intern("2"))], Value::num_int(-1));
        let mut s_rel = VRelation::empty(1);
        s_rel.push(vec![Cell::Const(consts.intern("5"))], Value::num_int(3));
        s_rel.push(vec![Cell::Const(consts.intern("6"))], Value::num_int(1));
        db.relations.insert("R".into(), r);
        db.relations.insert("S".into(), s_rel);
        db.refresh_annotation_profile();
        let order = consts.ranks();
        let pair: MonotonePair<u64> = MonotonePair::build(&q, &db, &order).unwrap();
        assert_eq!(pair.count(), BigUint::from(4u32));
        let rows: Vec<Vec<Cell>> = (1..=4)
            .map(|i| pair.access(&BigUint::from(i as u32)).unwrap().unwrap())
            .collect();
        let one = Cell::Const(consts.lookup("1").unwrap());
        let two = Cell::Const(consts.lookup("2").unwrap());
        let five = Cell::Const(consts.lookup("5").unwrap());
        let six = Cell::Const(consts.lookup("6").unwrap());
        assert_eq!(rows[0], vec![one.clone(), Cell::val(Value::num_int(2)), six.clone()]);
        assert_eq!(rows[1], vec![one, Cell::val(Value::num_int(6)), five.clone()]);
        assert_eq!(rows[2], vec![two.clone(), Cell::val(Value::num_int(-3)), five]);
        assert_eq!(rows[3], vec![two, Cell::val(Value::num_int(-1)), six]);
    }
}
