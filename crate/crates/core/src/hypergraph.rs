//! Structural analysis of query hypergraphs: acyclicity, join trees,
//! connected covers of the free variables, and disruptive trios.
//!
//! Acyclicity is decided by GYO ear removal with smallest-index tie breaking,
//! so trees are reproducible run to run. A join tree node corresponds either
//! to a body atom or to an extension node (a subset of some atom's variables)
//! introduced to cover a variable set.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;

use thiserror::Error;

use crate::query::{Atom, Query, Var};

/// Variable hypergraph of a query: one edge per atom.
#[derive(Clone, Debug)]
pub struct Hypergraph {
    pub edges: Vec<BTreeSet<Var>>,
}

impl Hypergraph {
    pub fn of_query(q: &Query) -> Hypergraph {
        Hypergraph { edges: q.body.iter().map(atom_vars).collect() }
    }

    pub fn vertices(&self) -> BTreeSet<Var> {
        self.edges.iter().flatten().cloned().collect()
    }
}

pub fn atom_vars(a: &Atom) -> BTreeSet<Var> {
    a.terms.iter().cloned().collect()
}

/// Where a join-tree node comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeOrigin {
    /// The node is the edge of the atom with this body index.
    Atom(usize),
    /// Extension node: a subset of some atom's variables.
    Extension,
}

#[derive(Clone, Debug)]
pub struct TreeNode {
    pub vars: BTreeSet<Var>,
    pub origin: NodeOrigin,
}

/// An undirected tree over hyperedges with the running-intersection property.
#[derive(Clone, Debug)]
pub struct JoinTree {
    pub nodes: Vec<TreeNode>,
    pub edges: Vec<(usize, usize)>,
}

impl JoinTree {
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        adj
    }

    /// Independent check of the running-intersection property: for every
    /// variable, the nodes containing it induce a connected subtree.
    pub fn check_running_intersection(&self) -> bool {
        if self.nodes.len() > 1 && self.edges.len() != self.nodes.len() - 1 {
            return false;
        }
        let adj = self.adjacency();
        // Connectivity of the whole tree.
        if !self.connected(&adj, &(0..self.nodes.len()).collect::<Vec<_>>()) {
            return false;
        }
        let mut vars: BTreeSet<&Var> = BTreeSet::new();
        for n in &self.nodes {
            vars.extend(n.vars.iter());
        }
        for v in vars {
            let holders: Vec<usize> =
                (0..self.nodes.len()).filter(|&i| self.nodes[i].vars.contains(v)).collect();
            if !self.connected_within(&adj, &holders) {
                return false;
            }
        }
        true
    }

    fn connected(&self, adj: &[Vec<usize>], nodes: &[usize]) -> bool {
        self.connected_within(adj, nodes)
    }

    fn connected_within(&self, adj: &[Vec<usize>], keep: &[usize]) -> bool {
        if keep.is_empty() {
            return true;
        }
        let keep_set: BTreeSet<usize> = keep.iter().copied().collect();
        let mut seen = BTreeSet::new();
        let mut queue = VecDeque::from([keep[0]]);
        seen.insert(keep[0]);
        while let Some(u) = queue.pop_front() {
            for &w in &adj[u] {
                if keep_set.contains(&w) && seen.insert(w) {
                    queue.push_back(w);
                }
            }
        }
        seen.len() == keep.len()
    }

    /// DOT rendering for debugging.
    pub fn to_dot(&self, marked: Option<&BTreeSet<usize>>) -> String {
        let mut out = String::from("graph jointree {\n  node [shape=box];\n");
        for (i, n) in self.nodes.iter().enumerate() {
            let label = n.vars.iter().cloned().collect::<Vec<_>>().join(",");
            let tag = match n.origin {
                NodeOrigin::Atom(k) => format!("atom {k}"),
                NodeOrigin::Extension => "ext".to_string(),
            };
            let style = match marked {
                Some(m) if m.contains(&i) => ", style=filled, fillcolor=lightgray",
                _ => "",
            };
            let _ = writeln!(out, "  n{i} [label=\"{{{label}}}\\n{tag}\"{style}];");
        }
        for &(a, b) in &self.edges {
            let _ = writeln!(out, "  n{a} -- n{b};");
        }
        out.push_str("}\n");
        out
    }
}

/// A join tree of an inclusive extension together with a connected set of
/// marked nodes whose variables are exactly the target set.
#[derive(Clone, Debug)]
pub struct ExtTree {
    pub tree: JoinTree,
    pub marked: BTreeSet<usize>,
}

impl ExtTree {
    pub fn marked_vars(&self) -> BTreeSet<Var> {
        self.marked.iter().flat_map(|&i| self.tree.nodes[i].vars.iter().cloned()).collect()
    }

    /// Full structural validation, used by tests and debug assertions.
    pub fn validate(&self, original_edges: &[BTreeSet<Var>], target: &BTreeSet<Var>) -> Result<(), String> {
        if !self.tree.check_running_intersection() {
            return Err("running intersection violated".into());
        }
        for n in &self.tree.nodes {
            if n.vars.is_empty() {
                continue;
            }
            if !original_edges.iter().any(|e| n.vars.is_subset(e)) {
                return Err(format!("node {:?} not contained in any original edge", n.vars));
            }
        }
        let adj = self.tree.adjacency();
        let marked: Vec<usize> = self.marked.iter().copied().collect();
        if !self.tree.connected_within(&adj, &marked) {
            return Err("marked nodes not connected".into());
        }
        if &self.marked_vars() != target {
            return Err(format!("marked vars {:?} != target {:?}", self.marked_vars(), target));
        }
        // Every original atom must have a node.
        for (i, _) in original_edges.iter().enumerate() {
            if !self.tree.nodes.iter().any(|n| n.origin == NodeOrigin::Atom(i)) {
                return Err(format!("atom {i} has no node"));
            }
        }
        Ok(())
    }
}

/// Residue left when GYO ear removal gets stuck.
#[derive(Clone, Debug)]
pub struct CyclicWitness {
    pub residue: Vec<BTreeSet<Var>>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StructureError {
    #[error("query is not free-connex")]
    NotFreeConnex,
}

/// GYO ear removal over a list of edges. Returns tree edges (child, parent)
/// in removal order, or the irreducible residue. Ties break to the smallest
/// index, so the result is deterministic.
fn gyo_parents(items: &[BTreeSet<Var>]) -> Result<Vec<(usize, usize)>, CyclicWitness> {
    let n = items.len();
    let mut alive: Vec<bool> = vec![true; n];
    let mut alive_count = n;
    let mut tree = Vec::new();
    while alive_count > 1 {
        let mut progress = false;
        'ear: for i in 0..n {
            if !alive[i] {
                continue;
            }
            // Variables of i shared with any other alive edge.
            let shared: BTreeSet<&Var> = items[i]
                .iter()
                .filter(|v| (0..n).any(|j| j != i && alive[j] && items[j].contains(*v)))
                .collect();
            for j in 0..n {
                if j == i || !alive[j] {
                    continue;
                }
                if shared.iter().all(|v| items[j].contains(*v)) {
                    tree.push((i, j));
                    alive[i] = false;
                    alive_count -= 1;
                    progress = true;
                    break 'ear;
                }
            }
        }
        if !progress {
            let residue = (0..n).filter(|&i| alive[i]).map(|i| items[i].clone()).collect();
            return Err(CyclicWitness { residue });
        }
    }
    Ok(tree)
}

/// Acyclicity test: a join tree over the atoms, or the cyclic residue.
pub fn gyo_acyclic(h: &Hypergraph) -> Result<JoinTree, CyclicWitness> {
    let tree_edges = gyo_parents(&h.edges)?;
    Ok(JoinTree {
        nodes: h
            .edges
            .iter()
            .enumerate()
            .map(|(i, vars)| TreeNode { vars: vars.clone(), origin: NodeOrigin::Atom(i) })
            .collect(),
        edges: tree_edges,
    })
}

/// Builds a join tree of an inclusive extension whose marked nodes form a
/// connected subtree with variables exactly `target`, or reports that
/// `h ∪ {target}` is cyclic.
///
/// Construction: run GYO on the edges plus `target`, root the tree at the
/// target node, and replace that node by one extension node per neighbouring
/// branch, holding the branch's share of `target`. Those pieces are each a
/// subset of an original edge and are themselves acyclic, so a join tree of
/// the pieces glues the branches back together.
pub fn ext_connex_tree(h: &Hypergraph, target: &BTreeSet<Var>) -> Result<ExtTree, CyclicWitness> {
    let all_vars = h.vertices();
    if *target == all_vars {
        // The join tree itself, every node marked.
        let tree = gyo_acyclic(h)?;
        let marked = (0..tree.nodes.len()).collect();
        return Ok(ExtTree { tree, marked });
    }

    let mut items = h.edges.clone();
    let s_idx = items.len();
    items.push(target.clone());
    let parent_edges = gyo_parents(&items)?;

    // Adjacency of the full tree including the target node.
    let mut adj = vec![Vec::new(); items.len()];
    for &(a, b) in &parent_edges {
        adj[a].push(b);
        adj[b].push(a);
    }

    let mut nodes: Vec<TreeNode> = h
        .edges
        .iter()
        .enumerate()
        .map(|(i, vars)| TreeNode { vars: vars.clone(), origin: NodeOrigin::Atom(i) })
        .collect();
    let mut edges: Vec<(usize, usize)> = Vec::new();

    // Keep tree edges not incident to the target node.
    for &(a, b) in &parent_edges {
        if a != s_idx && b != s_idx {
            edges.push((a, b));
        }
    }

    let branches: Vec<usize> = adj[s_idx].iter().copied().collect();
    let mut piece_nodes: Vec<usize> = Vec::new();
    let mut piece_sets: Vec<BTreeSet<Var>> = Vec::new();
    let mut piece_owner: Vec<usize> = Vec::new();
    for &c in &branches {
        let piece: BTreeSet<Var> = items[c].intersection(target).cloned().collect();
        if piece.is_empty() {
            continue;
        }
        let idx = nodes.len();
        nodes.push(TreeNode { vars: piece.clone(), origin: NodeOrigin::Extension });
        piece_nodes.push(idx);
        piece_sets.push(piece);
        piece_owner.push(c);
    }

    let mut marked: BTreeSet<usize> = BTreeSet::new();
    if piece_nodes.is_empty() {
        // target is empty (a branch sharing nothing with it contributes no
        // piece, and every target variable lives in some branch).
        debug_assert!(target.is_empty());
        let hub = nodes.len();
        nodes.push(TreeNode { vars: BTreeSet::new(), origin: NodeOrigin::Extension });
        marked.insert(hub);
        for &c in &branches {
            edges.push((c, hub));
        }
    } else {
        // Restriction of an acyclic hypergraph to the target variables stays
        // acyclic, and every restricted edge sits inside some piece, so the
        // pieces admit a join tree.
        let piece_tree = gyo_parents(&piece_sets)
            .expect("piece hypergraph of a connex query must be acyclic");
        for &(a, b) in &piece_tree {
            edges.push((piece_nodes[a], piece_nodes[b]));
        }
        for (k, &c) in piece_owner.iter().enumerate() {
            edges.push((c, piece_nodes[k]));
        }
        // Branches with an empty share hang off the first piece.
        for &c in &branches {
            if !piece_owner.contains(&c) {
                edges.push((c, piece_nodes[0]));
            }
        }
        marked.extend(piece_nodes.iter().copied());
    }

    let out = ExtTree { tree: JoinTree { nodes, edges }, marked };
    debug_assert!(out.validate(&h.edges, target).is_ok(), "{:?}", out.validate(&h.edges, target));
    Ok(out)
}

/// Three head variables witnessing why a lexicographic order is hard: the
/// first two are non-neighbours, both neighbour the third, and the third
/// comes later in the head.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrioWitness {
    pub x1: Var,
    pub x2: Var,
    pub x3: Var,
}

/// Scans head-variable triples in a fixed order and returns the first
/// disruptive trio, if any.
pub fn find_disruptive_trio(q: &Query) -> Option<TrioWitness> {
    let head = q.free_vars();
    let neighbors = neighbor_map(q);
    for k in 0..head.len() {
        for i in 0..k {
            for j in i + 1..k {
                let (a, b, c) = (&head[i], &head[j], &head[k]);
                let ab = neighbors.get(a).is_some_and(|s| s.contains(b));
                let ac = neighbors.get(a).is_some_and(|s| s.contains(c));
                let bc = neighbors.get(b).is_some_and(|s| s.contains(c));
                if !ab && ac && bc {
                    return Some(TrioWitness { x1: a.clone(), x2: b.clone(), x3: c.clone() });
                }
            }
        }
    }
    None
}

/// Variable → set of variables sharing an atom with it (excluding itself).
pub fn neighbor_map(q: &Query) -> BTreeMap<Var, BTreeSet<Var>> {
    let mut map: BTreeMap<Var, BTreeSet<Var>> = BTreeMap::new();
    for atom in &q.body {
        let vars = atom_vars(atom);
        for v in &vars {
            let entry = map.entry(v.clone()).or_default();
            entry.extend(vars.iter().filter(|w| *w != v).cloned());
        }
    }
    map
}

/// An ext-connex tree re-rooted around the node of `phi` so that the path
/// from that node to its nearest marked ancestor `r` satisfies:
///
/// 1. the path has at least two nodes;
/// 2. consecutive nodes before `r` share an existential variable;
/// 3. the variables of `r` are exactly the free variables of its predecessor.
///
/// Elimination along such a tree funnels the annotations of `phi`'s relation
/// into the relation of `r`.
pub fn anchored_ext_tree(q: &Query, phi_index: usize) -> Result<ExtTree, StructureError> {
    let h = Hypergraph::of_query(q);
    if gyo_acyclic(&h).is_err() {
        return Err(StructureError::NotFreeConnex);
    }
    let free: BTreeSet<Var> = q.free_vars().into_iter().collect();
    let mut ext = ext_connex_tree(&h, &free).map_err(|_| StructureError::NotFreeConnex)?;

    let v = ext
        .tree
        .nodes
        .iter()
        .position(|n| n.origin == NodeOrigin::Atom(phi_index))
        .expect("every atom has a node");

    if ext.marked.contains(&v) {
        // Split the marked node: the copy keeps the marked side, the original
        // keeps the unmarked side plus an edge to the copy.
        let copy = ext.tree.nodes.len();
        ext.tree.nodes.push(TreeNode { vars: ext.tree.nodes[v].vars.clone(), origin: NodeOrigin::Extension });
        for e in ext.tree.edges.iter_mut() {
            if e.0 == v && ext.marked.contains(&e.1) {
                e.0 = copy;
            } else if e.1 == v && ext.marked.contains(&e.0) {
                e.1 = copy;
            }
        }
        ext.tree.edges.push((v, copy));
        ext.marked.remove(&v);
        ext.marked.insert(copy);
        return Ok(ext);
    }

    // Path from v to the unique marked node of its component (components are
    // separated by edges between two marked nodes).
    let adj = ext.tree.adjacency();
    let path = path_to_marked(&ext, &adj, v);
    let k = path.len();
    debug_assert!(k >= 2);
    let r = path[k - 1];

    // Minimal i with no shared existential between path[i-1] and path[i].
    let mut cut = k - 1;
    for i in 1..k {
        let (a, b) = (path[i - 1], path[i]);
        let shares_existential = ext.tree.nodes[a]
            .vars
            .intersection(&ext.tree.nodes[b].vars)
            .any(|x| !free.contains(x));
        if !shares_existential {
            cut = i;
            break;
        }
    }
    let detach = path[cut - 1];
    let old_next = path[cut];
    let fresh_vars: BTreeSet<Var> =
        ext.tree.nodes[detach].vars.intersection(&free).cloned().collect();
    let fresh = ext.tree.nodes.len();
    ext.tree.nodes.push(TreeNode { vars: fresh_vars, origin: NodeOrigin::Extension });
    ext.tree.edges.retain(|&(a, b)| !(a == detach && b == old_next || a == old_next && b == detach));
    ext.tree.edges.push((detach, fresh));
    ext.tree.edges.push((fresh, r));
    ext.marked.insert(fresh);
    Ok(ext)
}

/// Walks from `v` to the marked root of its component, never crossing an edge
/// whose two endpoints are both marked.
pub fn path_to_marked(ext: &ExtTree, adj: &[Vec<usize>], v: usize) -> Vec<usize> {
    let n = ext.tree.nodes.len();
    let mut parent = vec![usize::MAX; n];
    let mut queue = VecDeque::from([v]);
    parent[v] = v;
    let mut root = None;
    'bfs: while let Some(u) = queue.pop_front() {
        for &w in &adj[u] {
            if parent[w] != usize::MAX {
                continue;
            }
            if ext.marked.contains(&u) && ext.marked.contains(&w) {
                continue; // edge between marked nodes: component boundary
            }
            parent[w] = u;
            if ext.marked.contains(&w) {
                root = Some(w);
                break 'bfs;
            }
            queue.push_back(w);
        }
    }
    let root = root.expect("component of an unmarked node has a marked root");
    let mut path = vec![root];
    let mut cur = root;
    while cur != v {
        cur = parent[cur];
        path.push(cur);
    }
    path.reverse();
    path
}
