//! Query/database transformations feeding the access structures.
//!
//! Every operation here maps a (query, annotated database) pair to another
//! pair with the same answers. The pipeline assembled by the planner chains
//! them: split self-joins, eliminate existential variables along an
//! ext-connex tree, fully reduce, and — for orders that involve the computed
//! value — turn annotations into an ordinary column.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use thiserror::Error;

use crate::hypergraph::{self, ExtTree, Hypergraph, NodeOrigin};
use crate::query::{Atom, HeadEntry, Query, Var};
use crate::semiring::{self, Value};
use crate::vdb::{Cell, VDatabase, VRelation};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RewriteError {
    #[error("query is not free-connex")]
    NotFreeConnex,
    #[error("query must be full for this step")]
    NotFull,
    #[error("semiring addition is not idempotent")]
    NotIdempotent,
    #[error("database is not locally annotated at {0}")]
    NotLocallyAnnotated(String),
    #[error("query must be self-join-free for this step")]
    SelfJoins,
    #[error("an atom contains some but not all variables that follow the computed value")]
    ZBlockViolation,
}

/// One step of a rewrite chain, kept for certificates and `--explain`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RewriteStep {
    SelfJoinSplit,
    FullReduce,
    EliminateLeaf(String),
    Deannotate(String),
    ExtendY(String),
    AnnotationToColumn(String),
}

impl fmt::Display for RewriteStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RewriteStep::SelfJoinSplit => write!(f, "SelfJoinSplit"),
            RewriteStep::FullReduce => write!(f, "FullReduce"),
            RewriteStep::EliminateLeaf(n) => write!(f, "EliminateLeaf({n})"),
            RewriteStep::Deannotate(r) => write!(f, "Deannotate({r})"),
            RewriteStep::ExtendY(r) => write!(f, "ExtendY({r})"),
            RewriteStep::AnnotationToColumn(r) => write!(f, "AnnotationToColumn({r})"),
        }
    }
}

/// Gives every atom a distinct relation symbol, duplicating relations (and
/// their annotations) as needed. Identity for self-join-free queries.
pub fn make_self_join_free(q: &Query, db: &VDatabase) -> (Query, VDatabase) {
    if q.is_self_join_free() {
        return (q.clone(), db.clone());
    }
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    let mut duplicated: BTreeSet<String> = BTreeSet::new();
    for atom in &q.body {
        let n = seen.entry(atom.relation.clone()).or_insert(0);
        *n += 1;
        if *n > 1 {
            duplicated.insert(atom.relation.clone());
        }
    }
    let mut new_q = q.clone();
    let mut new_db = VDatabase::new(db.semiring.clone());
    let mut counter: BTreeMap<String, usize> = BTreeMap::new();
    for atom in new_q.body.iter_mut() {
        if !duplicated.contains(&atom.relation) {
            new_db
                .relations
                .insert(atom.relation.clone(), db.rel(&atom.relation).clone());
            continue;
        }
        let k = counter.entry(atom.relation.clone()).or_insert(0);
        *k += 1;
        let fresh = format!("{}#{}", atom.relation, k);
        new_db.relations.insert(fresh.clone(), db.rel(&atom.relation).clone());
        atom.relation = fresh;
    }
    new_db.refresh_annotation_profile();
    (new_q, new_db)
}

/// Key of a row under an atom: the cells bound to each distinct variable, or
/// `None` when the row repeats a variable inconsistently (such rows can never
/// match the atom).
fn row_key(atom_terms: &[Var], distinct: &[Var], row: &[Cell]) -> Option<Vec<Cell>> {
    let mut key: Vec<Cell> = Vec::with_capacity(distinct.len());
    for d in distinct {
        let mut cell: Option<&Cell> = None;
        for (t, c) in atom_terms.iter().zip(row.iter()) {
            if t == d {
                match cell {
                    None => cell = Some(c),
                    Some(prev) if prev == c => {}
                    Some(_) => return None,
                }
            }
        }
        key.push(cell.expect("distinct var occurs in terms").clone());
    }
    Some(key)
}

fn distinct_vars(atom: &Atom) -> Vec<Var> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for t in &atom.terms {
        if seen.insert(t.clone()) {
            out.push(t.clone());
        }
    }
    out
}

/// Projection of a row (keyed by `from` variables) onto `to` variables.
fn project(from: &[Var], row: &[Cell], to: &[Var]) -> Vec<Cell> {
    to.iter()
        .map(|v| {
            let i = from.iter().position(|f| f == v).expect("projection var present");
            row[i].clone()
        })
        .collect()
}

/// Yannakakis full reduction of a full acyclic query: two semi-join sweeps
/// over a join tree, after which every surviving fact participates in at
/// least one answer. Annotations are untouched.
pub fn full_reduce(q: &Query, db: &VDatabase) -> Result<VDatabase, RewriteError> {
    let h = Hypergraph::of_query(q);
    let tree = hypergraph::gyo_acyclic(&h).map_err(|_| RewriteError::NotFreeConnex)?;
    let adj = tree.adjacency();
    let n = tree.nodes.len();
    if n == 0 {
        return Ok(db.clone());
    }

    // Rows surviving per atom, as (vars, keyed rows). Self-joins share a
    // relation, so we reduce per atom and intersect at the end.
    let mut atom_vars: Vec<Vec<Var>> = Vec::with_capacity(n);
    let mut atom_rows: Vec<Vec<usize>> = Vec::with_capacity(n);
    for node in &tree.nodes {
        let idx = match node.origin {
            NodeOrigin::Atom(i) => i,
            NodeOrigin::Extension => unreachable!("join tree of a query has atom nodes only"),
        };
        let atom = &q.body[idx];
        let rel = db.rel(&atom.relation);
        let dv = distinct_vars(atom);
        let keep: Vec<usize> = (0..rel.len())
            .filter(|&r| row_key(&atom.terms, &dv, &rel.rows[r]).is_some())
            .collect();
        atom_vars.push(dv);
        atom_rows.push(keep);
    }

    // Bottom-up then top-down passes.
    let mut order: Vec<usize> = Vec::new();
    let mut parent = vec![usize::MAX; n];
    let mut stack = vec![0usize];
    let mut seen = vec![false; n];
    seen[0] = true;
    while let Some(u) = stack.pop() {
        order.push(u);
        for &w in &adj[u] {
            if !seen[w] {
                seen[w] = true;
                parent[w] = u;
                stack.push(w);
            }
        }
    }

    let semijoin = |keeper: &mut Vec<usize>,
                    keeper_node: usize,
                    filter_node: usize,
                    atom_vars: &[Vec<Var>],
                    filter_rows: &[usize]| {
        let shared: Vec<Var> = atom_vars[keeper_node]
            .iter()
            .filter(|v| atom_vars[filter_node].contains(v))
            .cloned()
            .collect();
        let keeper_atom = node_atom(&tree.nodes[keeper_node], q);
        let filter_atom = node_atom(&tree.nodes[filter_node], q);
        let filter_rel = db.rel(&filter_atom.relation);
        let mut set: HashMap<Vec<Cell>, ()> = HashMap::new();
        for &r in filter_rows {
            let key = row_key(&filter_atom.terms, &atom_vars[filter_node], &filter_rel.rows[r])
                .expect("pre-filtered");
            set.insert(project(&atom_vars[filter_node], &key, &shared), ());
        }
        let keeper_rel = db.rel(&keeper_atom.relation);
        keeper.retain(|&r| {
            let key = row_key(&keeper_atom.terms, &atom_vars[keeper_node], &keeper_rel.rows[r])
                .expect("pre-filtered");
            set.contains_key(&project(&atom_vars[keeper_node], &key, &shared))
        });
    };

    for &u in order.iter().rev() {
        if parent[u] != usize::MAX {
            let rows = atom_rows[u].clone();
            semijoin(&mut atom_rows[parent[u]], parent[u], u, &atom_vars, &rows);
        }
    }
    for &u in order.iter() {
        if parent[u] != usize::MAX {
            let rows = atom_rows[parent[u]].clone();
            semijoin(&mut atom_rows[u], u, parent[u], &atom_vars, &rows);
        }
    }

    // Intersect per relation (several atoms may read the same relation).
    let mut survivors: BTreeMap<String, BTreeSet<usize>> = BTreeMap::new();
    for (node_idx, node) in tree.nodes.iter().enumerate() {
        let atom = node_atom(node, q);
        let rows: BTreeSet<usize> = atom_rows[node_idx].iter().copied().collect();
        match survivors.entry(atom.relation.clone()) {
            std::collections::btree_map::Entry::Occupied(mut e) => {
                let merged: BTreeSet<usize> = e.get().intersection(&rows).copied().collect();
                *e.get_mut() = merged;
            }
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(rows);
            }
        }
    }
    let mut out = VDatabase::new(db.semiring.clone());
    for (name, rel) in &db.relations {
        match survivors.get(name) {
            None => {
                out.relations.insert(name.clone(), rel.clone());
            }
            Some(keep) => {
                let mut nr = VRelation::empty(rel.arity);
                for &r in keep {
                    nr.push(rel.rows[r].clone(), rel.tau[r].clone());
                }
                out.relations.insert(name.clone(), nr);
            }
        }
    }
    out.refresh_annotation_profile();
    Ok(out)
}

fn node_atom<'q>(node: &crate::hypergraph::TreeNode, q: &'q Query) -> &'q Atom {
    match node.origin {
        NodeOrigin::Atom(i) => &q.body[i],
        NodeOrigin::Extension => unreachable!(),
    }
}

/// Output of an existential elimination: a full acyclic query over fresh
/// relations together with its database, and where the annotations ended up.
pub struct Eliminated {
    pub query: Query,
    pub db: VDatabase,
    pub steps: Vec<RewriteStep>,
}

/// Removes existential variables from a free-connex star query, preserving
/// answers and annotations: extension nodes of an ext-connex tree are
/// materialized as 1̄-annotated projections, then every leaf outside the
/// marked subtree is projected onto its shared variables (⊕-combining
/// annotations) and multiplied into its neighbour.
pub fn eliminate_existentials(q: &Query, db: &VDatabase) -> Result<Eliminated, RewriteError> {
    let free: BTreeSet<Var> = q.free_vars().into_iter().collect();
    let h = Hypergraph::of_query(q);
    if hypergraph::gyo_acyclic(&h).is_err() {
        return Err(RewriteError::NotFreeConnex);
    }
    let ext = hypergraph::ext_connex_tree(&h, &free).map_err(|_| RewriteError::NotFreeConnex)?;
    eliminate_along(q, db, ext)
}

/// Order in which leaves outside the marked subtree are folded away, with
/// the neighbour each one folds into. Deterministic: smallest node index
/// first.
pub fn leaf_elimination_order(ext: &ExtTree) -> Vec<(usize, usize)> {
    let adj = ext.tree.adjacency();
    let mut degree: Vec<usize> = adj.iter().map(|a| a.len()).collect();
    let mut alive: Vec<bool> = vec![true; ext.tree.nodes.len()];
    let mut order = Vec::new();
    loop {
        let Some(leaf) = (0..alive.len())
            .find(|&i| alive[i] && !ext.marked.contains(&i) && degree[i] <= 1)
        else {
            break;
        };
        let neighbor = adj[leaf]
            .iter()
            .copied()
            .find(|&w| alive[w])
            .expect("non-marked leaf has a live neighbour");
        order.push((leaf, neighbor));
        alive[leaf] = false;
        degree[neighbor] -= 1;
    }
    order
}

/// Atoms of the query an elimination along `ext` produces: the marked nodes
/// in index order, extension nodes under fresh relation names.
pub fn eliminated_atoms(q: &Query, ext: &ExtTree) -> Vec<Atom> {
    let taken: BTreeSet<&String> = q.body.iter().map(|a| &a.relation).collect();
    let mut fresh = 0usize;
    let mut out = Vec::new();
    for (i, n) in ext.tree.nodes.iter().enumerate() {
        if !ext.marked.contains(&i) {
            continue;
        }
        let (name, terms) = match ext.tree.nodes[i].origin {
            NodeOrigin::Atom(k) => (q.body[k].relation.clone(), distinct_vars(&q.body[k])),
            NodeOrigin::Extension => {
                let name = loop {
                    fresh += 1;
                    let cand = format!("X{fresh}");
                    if !taken.contains(&cand) {
                        break cand;
                    }
                };
                (name, n.vars.iter().cloned().collect())
            }
        };
        out.push(Atom { relation: name, terms });
    }
    out
}

/// Elimination along a caller-provided ext-connex tree.
pub fn eliminate_along(q: &Query, db: &VDatabase, ext: ExtTree) -> Result<Eliminated, RewriteError> {
    let (q, db) = make_self_join_free(q, db);
    let mut steps = Vec::new();
    debug_assert_eq!(
        q.body.len(),
        ext.tree.nodes.iter().filter(|n| matches!(n.origin, NodeOrigin::Atom(_))).count(),
        "tree does not match query"
    );

    // Working state per tree node: variable list, rows, annotations.
    struct NodeRel {
        vars: Vec<Var>,
        rows: Vec<Vec<Cell>>,
        tau: Vec<Value>,
        alive: bool,
    }
    let spec = db.semiring.clone();
    let mut nodes: Vec<NodeRel> = Vec::with_capacity(ext.tree.nodes.len());
    for n in &ext.tree.nodes {
        match n.origin {
            NodeOrigin::Atom(i) => {
                let atom = &q.body[i];
                let rel = db.rel(&atom.relation);
                let dv = distinct_vars(atom);
                let mut rows = Vec::new();
                let mut tau = Vec::new();
                let mut seen: HashMap<Vec<Cell>, usize> = HashMap::new();
                for (r, row) in rel.rows.iter().enumerate() {
                    if let Some(key) = row_key(&atom.terms, &dv, row) {
                        match seen.get(&key) {
                            // Atoms with repeated variables can collapse
                            // distinct rows onto one key; combine with ⊕.
                            Some(&at) => {
                                tau[at] = semiring::plus(&spec, &tau[at], &rel.tau[r]);
                            }
                            None => {
                                seen.insert(key.clone(), rows.len());
                                rows.push(key);
                                tau.push(rel.tau[r].clone());
                            }
                        }
                    }
                }
                nodes.push(NodeRel { vars: dv, rows, tau, alive: true });
            }
            NodeOrigin::Extension => {
                nodes.push(NodeRel { vars: n.vars.iter().cloned().collect(), rows: Vec::new(), tau: Vec::new(), alive: true });
            }
        }
    }

    // Materialize extension nodes by projecting the smallest relation whose
    // atom covers the node's variables, annotated 1̄.
    for i in 0..nodes.len() {
        if !matches!(ext.tree.nodes[i].origin, NodeOrigin::Extension) {
            continue;
        }
        let vars = nodes[i].vars.clone();
        let mut best: Option<usize> = None;
        for (j, n) in ext.tree.nodes.iter().enumerate() {
            if !matches!(n.origin, NodeOrigin::Atom(_)) {
                continue;
            }
            if vars.iter().all(|v| nodes[j].vars.contains(v))
                && best.map_or(true, |b: usize| nodes[j].rows.len() < nodes[b].rows.len())
            {
                best = Some(j);
            }
        }
        let src = best.expect("extension node contained in some atom");
        let mut seen: HashMap<Vec<Cell>, ()> = HashMap::new();
        let mut rows = Vec::new();
        let src_vars = nodes[src].vars.clone();
        for row in &nodes[src].rows {
            let p = project(&src_vars, row, &vars);
            if seen.insert(p.clone(), ()).is_none() {
                rows.push(p);
            }
        }
        nodes[i].tau = vec![spec.one.clone(); rows.len()];
        nodes[i].rows = rows;
    }

    // Iteratively eliminate leaves outside the marked subtree.
    for (leaf, neighbor) in leaf_elimination_order(&ext) {
        let shared: Vec<Var> = nodes[leaf]
            .vars
            .iter()
            .filter(|v| nodes[neighbor].vars.contains(*v))
            .cloned()
            .collect();

        // Project the leaf onto the shared variables, ⊕-combining.
        let mut table: HashMap<Vec<Cell>, Value> = HashMap::new();
        let leaf_vars = nodes[leaf].vars.clone();
        for (row, tau) in nodes[leaf].rows.iter().zip(nodes[leaf].tau.iter()) {
            let key = project(&leaf_vars, row, &shared);
            match table.get_mut(&key) {
                Some(acc) => *acc = semiring::plus(&spec, acc, tau),
                None => {
                    table.insert(key, tau.clone());
                }
            }
        }
        // Join into the neighbour: drop rows with no partner, ⊗-multiply the
        // rest.
        let nb_vars = nodes[neighbor].vars.clone();
        let mut new_rows = Vec::new();
        let mut new_tau = Vec::new();
        for (row, tau) in nodes[neighbor].rows.iter().zip(nodes[neighbor].tau.iter()) {
            let key = project(&nb_vars, row, &shared);
            if let Some(sum) = table.get(&key) {
                new_rows.push(row.clone());
                new_tau.push(semiring::times(&spec, tau, sum));
            }
        }
        nodes[neighbor].rows = new_rows;
        nodes[neighbor].tau = new_tau;
        nodes[leaf].alive = false;
        steps.push(RewriteStep::EliminateLeaf(format!(
            "{{{}}}",
            nodes[leaf].vars.join(",")
        )));
    }

    // Remaining nodes are the marked subtree; they become the new query.
    let body = eliminated_atoms(&q, &ext);
    let mut out_db = VDatabase::new(spec.clone());
    let mut atoms = body.iter();
    for (i, n) in nodes.iter().enumerate() {
        if !n.alive {
            continue;
        }
        debug_assert!(ext.marked.contains(&i));
        let atom = atoms.next().expect("one output atom per marked node");
        debug_assert_eq!(atom.terms, n.vars);
        let mut rel = VRelation::empty(n.vars.len());
        for (row, tau) in n.rows.iter().zip(n.tau.iter()) {
            rel.push(row.clone(), tau.clone());
        }
        out_db.relations.insert(atom.relation.clone(), rel);
    }
    let out_q = Query { name: q.name.clone(), head: q.head.clone(), body };
    out_db.refresh_annotation_profile();
    Ok(Eliminated { query: out_q, db: out_db, steps })
}

/// Existential elimination for a locally annotated database over an
/// ⊕-idempotent semiring, along a tree anchored at the annotated relation's
/// atom. The output database is locally annotated again; returns the new
/// carrier relation.
pub fn idempotent_eliminate(
    q: &Query,
    annotated: &str,
    db: &VDatabase,
) -> Result<(Eliminated, String), RewriteError> {
    if !db.semiring.plus_idempotent {
        return Err(RewriteError::NotIdempotent);
    }
    if !db.is_locally_annotated_at(annotated) {
        return Err(RewriteError::NotLocallyAnnotated(annotated.to_string()));
    }
    if !q.is_self_join_free() {
        return Err(RewriteError::SelfJoins);
    }
    let phi = q
        .body
        .iter()
        .position(|a| a.relation == annotated)
        .ok_or_else(|| RewriteError::NotLocallyAnnotated(annotated.to_string()))?;
    let ext = hypergraph::anchored_ext_tree(q, phi).map_err(|_| RewriteError::NotFreeConnex)?;

    // The annotations funnel into the marked root of the anchor's component.
    let adj = ext.tree.adjacency();
    let v = ext
        .tree
        .nodes
        .iter()
        .position(|n| n.origin == NodeOrigin::Atom(phi))
        .expect("anchor atom has a node");
    let path = hypergraph::path_to_marked(&ext, &adj, v);
    let root = *path.last().unwrap();

    let eliminated = eliminate_along(q, db, ext.clone())?;
    // Recover the output relation name of the root node.
    let alive_before_root = (0..root)
        .filter(|&i| eliminated_kept(&ext, i))
        .count();
    let name = eliminated.query.body[alive_before_root].relation.clone();
    debug_assert!(eliminated.db.is_locally_annotated_at(&name));
    Ok((eliminated, name))
}

fn eliminated_kept(ext: &ExtTree, i: usize) -> bool {
    ext.marked.contains(&i)
}

/// Replaces the star with a fresh variable, per the deannotation rules: the
/// variable is appended to every atom subsuming the carrier's variables, and
/// when the carrier's variables all precede the star, the variable advances
/// to sit right after the last of them.
pub fn deannotate(q: &Query, carrier: &str) -> Result<(Query, Var), RewriteError> {
    if !q.is_full() {
        return Err(RewriteError::NotFull);
    }
    if !q.is_self_join_free() {
        return Err(RewriteError::SelfJoins);
    }
    let star = q.star_position().expect("deannotation needs a star");
    let y = q.fresh_var("y");
    let carrier_vars: BTreeSet<Var> =
        q.body.iter().find(|a| a.relation == carrier).map(|a| hypergraph::atom_vars(a)).unwrap_or_default();

    let mut body = q.body.clone();
    for atom in body.iter_mut() {
        let vars = hypergraph::atom_vars(atom);
        if carrier_vars.is_subset(&vars) {
            atom.terms.push(y.clone());
        }
    }

    let before: Vec<Var> = q.vars_before_star();
    let mut head: Vec<HeadEntry> = q.head.clone();
    head[star] = HeadEntry::Var(y.clone());
    if carrier_vars.iter().all(|v| before.contains(v)) && !carrier_vars.is_empty() {
        // Advance y to immediately after the last carrier variable.
        head.remove(star);
        let last = head
            .iter()
            .enumerate()
            .filter(|(_, e)| matches!(e, HeadEntry::Var(v) if carrier_vars.contains(v)))
            .map(|(i, _)| i)
            .max()
            .expect("carrier variables appear in the head");
        head.insert(last + 1, HeadEntry::Var(y.clone()));
    }
    let out = Query { name: q.name.clone(), head, body };
    Ok((out, y))
}

/// Materializes the annotation of a locally annotated full query as a data
/// column: the carrier grows a column holding τ(f), every atom subsuming the
/// carrier's variables grows the τ of its unique agreeing carrier fact, and
/// the query becomes the deannotation. Run on a fully reduced database.
/// `present` maps each annotation to the cell the order should see.
pub fn extend_with_annotation_var(
    q: &Query,
    carrier: &str,
    db: &VDatabase,
    present: &dyn Fn(&Value) -> Value,
) -> Result<(Query, Var, VDatabase), RewriteError> {
    if !db.is_locally_annotated_at(carrier) {
        return Err(RewriteError::NotLocallyAnnotated(carrier.to_string()));
    }
    let (q_r, y) = deannotate(q, carrier)?;

    let carrier_atom = q.body.iter().find(|a| a.relation == carrier).expect("carrier atom");
    let carrier_rel = db.rel(carrier);
    let cdv = distinct_vars(carrier_atom);
    let mut tau_by_key: HashMap<Vec<Cell>, Value> = HashMap::new();
    for (row, tau) in carrier_rel.rows.iter().zip(carrier_rel.tau.iter()) {
        if let Some(key) = row_key(&carrier_atom.terms, &cdv, row) {
            tau_by_key.insert(key, tau.clone());
        }
    }

    let mut out = VDatabase::new(db.semiring.clone());
    for atom in &q.body {
        let vars = hypergraph::atom_vars(atom);
        let widened = carrier_atom.terms.iter().all(|v| vars.contains(v));
        let rel = db.rel(&atom.relation);
        if !widened {
            out.relations.insert(atom.relation.clone(), rel.clone());
            continue;
        }
        let dv = distinct_vars(atom);
        let mut nr = VRelation::empty(rel.arity + 1);
        for row in rel.rows.iter() {
            let Some(key) = row_key(&atom.terms, &dv, row) else { continue };
            let carrier_key = project(&dv, &key, &cdv);
            // Dangling rows (no agreeing carrier fact) are dropped; a fully
            // reduced database has none.
            let Some(tau) = tau_by_key.get(&carrier_key) else { continue };
            let mut new_row = row.clone();
            new_row.push(Cell::val(present(tau)));
            nr.push(new_row, db.semiring.one.clone());
        }
        out.relations.insert(atom.relation.clone(), nr);
    }
    // The output is a plain database: annotations all 1̄.
    for (_, rel) in out.relations.iter_mut() {
        for t in rel.tau.iter_mut() {
            *t = db.semiring.one.clone();
        }
    }
    out.refresh_annotation_profile();
    Ok((q_r, y, out))
}

/// Output of the y-extension for interior-star orders.
pub struct Extended {
    /// Head is (x⃗, y, z⃗, ★).
    pub query: Query,
    pub y: Var,
    pub db: VDatabase,
    /// Atoms whose variables all precede the star.
    pub before_atoms: Vec<Atom>,
}

/// For a full star query whose trailing variables form a block (every atom
/// contains all of them or none), appends a fresh variable to one covering
/// atom holding the ⊗-product of the annotations agreeing with each fact
/// across the trailing block's atoms, and moves the star to the end.
/// `present` canonicalizes the product for ordering. Run on a fully reduced
/// database.
pub fn extend_with_y(
    q: &Query,
    db: &VDatabase,
    present: &dyn Fn(&Value) -> Value,
) -> Result<Extended, RewriteError> {
    if !q.is_full() {
        return Err(RewriteError::NotFull);
    }
    let star = q.star_position().expect("interior star");
    let before_vars: BTreeSet<Var> = q.vars_before_star().into_iter().collect();
    let after_vars: BTreeSet<Var> = q.vars_after_star().into_iter().collect();
    debug_assert!(!after_vars.is_empty());

    let mut before_atoms = Vec::new();
    let mut after_atoms: Vec<&Atom> = Vec::new();
    for atom in &q.body {
        let vars = hypergraph::atom_vars(atom);
        if vars.iter().all(|v| before_vars.contains(v)) {
            before_atoms.push(atom.clone());
        } else if after_vars.iter().all(|v| vars.contains(v)) {
            after_atoms.push(atom);
        } else if vars.iter().any(|v| after_vars.contains(v)) {
            return Err(RewriteError::ZBlockViolation);
        } else {
            // Atom of x⃗-variables only; treat as "before".
            before_atoms.push(atom.clone());
        }
    }
    // Some atom of the trailing block covers all its variables; pick the
    // first in body order.
    let after_union: BTreeSet<Var> =
        after_atoms.iter().flat_map(|a| hypergraph::atom_vars(a)).collect();
    let phi = after_atoms
        .iter()
        .find(|a| after_union.iter().all(|v| hypergraph::atom_vars(a).contains(v)))
        .copied()
        .cloned()
        .ok_or(RewriteError::ZBlockViolation)?;

    let y = q.fresh_var("y");
    // New head: (x⃗, y, z⃗, ★).
    let mut head: Vec<HeadEntry> = Vec::with_capacity(q.head.len() + 1);
    for (i, e) in q.head.iter().enumerate() {
        if i == star {
            head.push(HeadEntry::Var(y.clone()));
        } else {
            head.push(e.clone());
        }
    }
    head.push(HeadEntry::Star);

    let mut body = q.body.clone();
    for atom in body.iter_mut() {
        if atom.relation == phi.relation && atom.terms == phi.terms {
            atom.terms.push(y.clone());
            break;
        }
    }

    // Per-fact y value: ⊗ over the agreeing facts of every trailing atom
    // (including φ's own annotation).
    let spec = db.semiring.clone();
    let phi_rel = db.rel(&phi.relation);
    let phi_dv = distinct_vars(&phi);
    let mut lookups: Vec<(Vec<Var>, HashMap<Vec<Cell>, Value>)> = Vec::new();
    for atom in &after_atoms {
        if atom.relation == phi.relation && atom.terms == phi.terms {
            continue;
        }
        let rel = db.rel(&atom.relation);
        let dv = distinct_vars(atom);
        let mut map = HashMap::new();
        for (row, tau) in rel.rows.iter().zip(rel.tau.iter()) {
            if let Some(key) = row_key(&atom.terms, &dv, row) {
                map.insert(key, tau.clone());
            }
        }
        lookups.push((dv, map));
    }

    let mut out = VDatabase::new(spec.clone());
    for atom in &q.body {
        if !(atom.relation == phi.relation && atom.terms == phi.terms) {
            out.relations.insert(atom.relation.clone(), db.rel(&atom.relation).clone());
        }
    }
    let mut nr = VRelation::empty(phi_rel.arity + 1);
    'rows: for (row, tau) in phi_rel.rows.iter().zip(phi_rel.tau.iter()) {
        let Some(key) = row_key(&phi.terms, &phi_dv, row) else { continue };
        let mut acc = tau.clone();
        for (dv, map) in &lookups {
            let sub = project(&phi_dv, &key, dv);
            match map.get(&sub) {
                Some(t) => acc = semiring::times(&spec, &acc, t),
                None => continue 'rows, // dangling; none after full reduction
            }
        }
        let mut new_row = row.clone();
        new_row.push(Cell::val(present(&acc)));
        nr.push(new_row, tau.clone());
    }
    out.relations.insert(phi.relation.clone(), nr);
    out.refresh_annotation_profile();

    let query = Query { name: q.name.clone(), head, body };
    Ok(Extended { query, y, db: out, before_atoms })
}
