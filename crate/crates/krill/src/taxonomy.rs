//! Rooted taxonomy trees, least-common-ancestor classification of reads
//! from hit lists, and hierarchical count summaries.
//!
//! The tree is immutable after [`build_taxonomy`]; depths are precomputed so
//! `lca` runs by lifting the deeper node. Input/output formats:
//!
//! - taxonomy TSV: `child_id<TAB>parent_id<TAB>name<TAB>rank`, root row has
//!   an empty parent field; `#`-prefixed lines are headers.
//! - hits TSV: `read_id<TAB>taxon_id`, one row per hit.
//! - hierarchy output: indented text (`name<TAB>direct<TAB>cumulative`,
//!   two-space indent per depth) plus a nested JSON document.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TaxonomyError {
    #[error("empty edge list")]
    EmptyEdgeList,
    #[error("duplicate node id {0:?}")]
    DuplicateNode(String),
    #[error("parent {parent:?} of node {child:?} is never defined")]
    OrphanParent { child: String, parent: String },
    #[error("multiple roots: {0:?} and {1:?}")]
    MultipleRoots(String, String),
    #[error("no root node (every node has a parent)")]
    NoRoot,
    #[error("cycle involving node {0:?}")]
    Cycle(String),
    #[error("unknown taxon id {0:?}")]
    UnknownTaxon(String),
    #[error("empty taxon set")]
    EmptyTaxonSet,
    #[error("line {line}: malformed row: {msg}")]
    MalformedRow { line: u64, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One row of a taxonomy definition: a node and its parent (none for root).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaxEdge {
    pub child: String,
    pub parent: Option<String>,
    pub name: String,
    pub rank: String,
}

#[derive(Debug, Clone)]
pub struct TaxNode {
    pub id: String,
    pub name: String,
    pub rank: String,
    pub parent: Option<usize>,
    pub depth: u32,
    pub children: Vec<usize>,
}

/// Immutable rooted tree with id lookup and precomputed depths.
#[derive(Debug, Clone)]
pub struct TaxonomyTree {
    nodes: Vec<TaxNode>,
    index: HashMap<String, usize>,
    root: usize,
}

/// Validate edges and build the tree. Children lists are sorted by node id
/// so traversals are deterministic.
pub fn build_taxonomy(edges: &[TaxEdge]) -> Result<TaxonomyTree, TaxonomyError> {
    if edges.is_empty() {
        return Err(TaxonomyError::EmptyEdgeList);
    }
    let mut index = HashMap::with_capacity(edges.len());
    for (i, e) in edges.iter().enumerate() {
        if index.insert(e.child.clone(), i).is_some() {
            return Err(TaxonomyError::DuplicateNode(e.child.clone()));
        }
    }
    let mut root = None;
    let mut nodes: Vec<TaxNode> = Vec::with_capacity(edges.len());
    for (i, e) in edges.iter().enumerate() {
        let parent = match &e.parent {
            None => {
                if let Some(r) = root {
                    return Err(TaxonomyError::MultipleRoots(edges[r as usize].child.clone(), e.child.clone()));
                }
                root = Some(i as u32);
                None
            }
            Some(p) => match index.get(p) {
                Some(pi) => Some(*pi),
                None => {
                    return Err(TaxonomyError::OrphanParent { child: e.child.clone(), parent: p.clone() })
                }
            },
        };
        nodes.push(TaxNode {
            id: e.child.clone(),
            name: e.name.clone(),
            rank: e.rank.clone(),
            parent,
            depth: 0,
            children: Vec::new(),
        });
    }
    let root = root.ok_or(TaxonomyError::NoRoot)? as usize;

    for i in 0..nodes.len() {
        if let Some(p) = nodes[i].parent {
            nodes[p].children.push(i);
        }
    }
    // sort children by child id for deterministic traversal
    let snapshot: Vec<String> = nodes.iter().map(|n| n.id.clone()).collect();
    for n in nodes.iter_mut() {
        n.children.sort_by(|a, b| snapshot[*a].cmp(&snapshot[*b]));
    }

    // depth assignment doubles as reachability check: anything not reached
    // from the root sits on a cycle
    let mut reached = vec![false; nodes.len()];
    let mut stack = vec![(root, 0u32)];
    while let Some((i, d)) = stack.pop() {
        reached[i] = true;
        nodes[i].depth = d;
        for &c in &nodes[i].children {
            stack.push((c, d + 1));
        }
    }
    if let Some(i) = reached.iter().position(|r| !r) {
        return Err(TaxonomyError::Cycle(nodes[i].id.clone()));
    }

    Ok(TaxonomyTree { nodes, index, root })
}

impl TaxonomyTree {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn root_id(&self) -> &str {
        &self.nodes[self.root].id
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn node(&self, id: &str) -> Option<&TaxNode> {
        self.index.get(id).map(|i| &self.nodes[*i])
    }

    pub fn depth(&self, id: &str) -> Option<u32> {
        self.node(id).map(|n| n.depth)
    }

    fn idx(&self, id: &str) -> Result<usize, TaxonomyError> {
        self.index.get(id).copied().ok_or_else(|| TaxonomyError::UnknownTaxon(id.to_string()))
    }

    /// Path of node ids from the root down to `id` (inclusive).
    pub fn root_path(&self, id: &str) -> Result<Vec<&str>, TaxonomyError> {
        let mut i = self.idx(id)?;
        let mut path = vec![self.nodes[i].id.as_str()];
        while let Some(p) = self.nodes[i].parent {
            path.push(self.nodes[p].id.as_str());
            i = p;
        }
        path.reverse();
        Ok(path)
    }

    /// Deepest node that is an ancestor-or-self of every member of `taxa`.
    pub fn lca<'a>(&self, taxa: impl IntoIterator<Item = &'a str>) -> Result<&str, TaxonomyError> {
        let mut acc: Option<usize> = None;
        for id in taxa {
            let i = self.idx(id)?;
            acc = Some(match acc {
                None => i,
                Some(a) => self.lca2(a, i),
            });
        }
        match acc {
            Some(i) => Ok(&self.nodes[i].id),
            None => Err(TaxonomyError::EmptyTaxonSet),
        }
    }

    fn lca2(&self, mut a: usize, mut b: usize) -> usize {
        while self.nodes[a].depth > self.nodes[b].depth {
            a = self.nodes[a].parent.expect("non-root node has parent");
        }
        while self.nodes[b].depth > self.nodes[a].depth {
            b = self.nodes[b].parent.expect("non-root node has parent");
        }
        while a != b {
            a = self.nodes[a].parent.expect("non-root node has parent");
            b = self.nodes[b].parent.expect("non-root node has parent");
        }
        a
    }

    fn root_idx(&self) -> usize {
        self.root
    }
}

/// A classified read: `taxon` is `None` for UNCLASSIFIED.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TaxAssignment {
    pub read_id: String,
    pub taxon: Option<String>,
    pub n_hits: usize,
}

pub const UNCLASSIFIED: &str = "UNCLASSIFIED";

impl TaxAssignment {
    pub fn taxon_label(&self) -> &str {
        self.taxon.as_deref().unwrap_or(UNCLASSIFIED)
    }
}

/// Assign each read the LCA of its hit set, or UNCLASSIFIED when it has
/// fewer than `min_hits` hits. Output is sorted by read id.
pub fn classify_reads(
    hits: &BTreeMap<String, Vec<String>>,
    tree: &TaxonomyTree,
    min_hits: usize,
) -> Result<Vec<TaxAssignment>, TaxonomyError> {
    let min_hits = min_hits.max(1);
    let mut out = Vec::with_capacity(hits.len());
    for (read_id, taxa) in hits {
        for t in taxa {
            tree.idx(t)?;
        }
        let taxon = if taxa.len() >= min_hits {
            Some(tree.lca(taxa.iter().map(|s| s.as_str()))?.to_string())
        } else {
            None
        };
        out.push(TaxAssignment { read_id: read_id.clone(), taxon, n_hits: taxa.len() });
    }
    Ok(out)
}

/// Direct and subtree-cumulative assignment counts per node.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct NodeCounts {
    pub direct: usize,
    pub cumulative: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HierarchyCounts {
    /// Keyed by node id; every tree node is present.
    pub per_node: BTreeMap<String, NodeCounts>,
    pub unclassified: usize,
}

/// Count assignments per node, then accumulate over subtrees.
pub fn hierarchy_counts(
    assignments: &[TaxAssignment],
    tree: &TaxonomyTree,
) -> Result<HierarchyCounts, TaxonomyError> {
    let mut direct = vec![0usize; tree.nodes.len()];
    let mut unclassified = 0;
    for a in assignments {
        match &a.taxon {
            Some(t) => direct[tree.idx(t)?] += 1,
            None => unclassified += 1,
        }
    }
    let mut cumulative = direct.clone();
    // children always have larger depth; accumulate deepest-first
    let mut order: Vec<usize> = (0..tree.nodes.len()).collect();
    order.sort_by_key(|i| std::cmp::Reverse(tree.nodes[*i].depth));
    for i in order {
        if let Some(p) = tree.nodes[i].parent {
            cumulative[p] += cumulative[i];
        }
    }
    let per_node = tree
        .nodes
        .iter()
        .enumerate()
        .map(|(i, n)| (n.id.clone(), NodeCounts { direct: direct[i], cumulative: cumulative[i] }))
        .collect();
    Ok(HierarchyCounts { per_node, unclassified })
}

/// Indented text rendering of the count hierarchy. Two spaces per depth,
/// children in id order, UNCLASSIFIED appended as a final unindented row.
pub fn write_hierarchy_text(
    tree: &TaxonomyTree,
    counts: &HierarchyCounts,
    mut out: impl Write,
) -> std::io::Result<()> {
    let mut stack = vec![tree.root_idx()];
    while let Some(i) = stack.pop() {
        let n = &tree.nodes[i];
        let c = &counts.per_node[&n.id];
        writeln!(out, "{}{}\t{}\t{}", "  ".repeat(n.depth as usize), n.name, c.direct, c.cumulative)?;
        for &child in n.children.iter().rev() {
            stack.push(child);
        }
    }
    writeln!(out, "{}\t{}\t{}", UNCLASSIFIED, counts.unclassified, counts.unclassified)
}

/// Nested JSON rendering of the count hierarchy.
pub fn hierarchy_json(tree: &TaxonomyTree, counts: &HierarchyCounts) -> serde_json::Value {
    fn node_json(tree: &TaxonomyTree, counts: &HierarchyCounts, i: usize) -> serde_json::Value {
        let n = &tree.nodes[i];
        let c = &counts.per_node[&n.id];
        serde_json::json!({
            "id": n.id,
            "name": n.name,
            "rank": n.rank,
            "direct": c.direct,
            "cumulative": c.cumulative,
            "children": n.children.iter().map(|&ch| node_json(tree, counts, ch)).collect::<Vec<_>>(),
        })
    }
    serde_json::json!({
        "root": node_json(tree, counts, tree.root_idx()),
        "unclassified": counts.unclassified,
    })
}

/// Parse the `child<TAB>parent<TAB>name<TAB>rank` taxonomy format.
pub fn parse_taxonomy_tsv(input: impl BufRead) -> Result<Vec<TaxEdge>, TaxonomyError> {
    let mut edges = Vec::new();
    for (no, line) in input.lines().enumerate() {
        let line = line?;
        let lineno = no as u64 + 1;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(TaxonomyError::MalformedRow {
                line: lineno,
                msg: format!("expected 4 tab-separated fields, found {}", fields.len()),
            });
        }
        if fields[0].is_empty() {
            return Err(TaxonomyError::MalformedRow { line: lineno, msg: "empty child id".into() });
        }
        edges.push(TaxEdge {
            child: fields[0].to_string(),
            parent: if fields[1].is_empty() { None } else { Some(fields[1].to_string()) },
            name: fields[2].to_string(),
            rank: fields[3].to_string(),
        });
    }
    Ok(edges)
}

/// Parse `read_id<TAB>taxon_id` hit rows into per-read hit lists.
pub fn parse_hits_tsv(input: impl BufRead) -> Result<BTreeMap<String, Vec<String>>, TaxonomyError> {
    let mut hits: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (no, line) in input.lines().enumerate() {
        let line = line?;
        let lineno = no as u64 + 1;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 2 || fields[0].is_empty() || fields[1].is_empty() {
            return Err(TaxonomyError::MalformedRow {
                line: lineno,
                msg: "expected read_id<TAB>taxon_id".into(),
            });
        }
        hits.entry(fields[0].to_string()).or_default().push(fields[1].to_string());
    }
    Ok(hits)
}

/// Assignments as TSV: `read_id<TAB>taxon<TAB>n_hits`, sorted by read id.
pub fn write_assignments_tsv(assignments: &[TaxAssignment], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "#read_id\ttaxon\tn_hits")?;
    for a in assignments {
        writeln!(out, "{}\t{}\t{}", a.read_id, a.taxon_label(), a.n_hits)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn edge(child: &str, parent: Option<&str>) -> TaxEdge {
        TaxEdge {
            child: child.to_string(),
            parent: parent.map(|s| s.to_string()),
            name: format!("name-{child}"),
            rank: "clade".to_string(),
        }
    }

    fn small_tree() -> TaxonomyTree {
        // root -> A -> A1, A2 ; root -> B
        build_taxonomy(&[
            edge("root", None),
            edge("A", Some("root")),
            edge("B", Some("root")),
            edge("A1", Some("A")),
            edge("A2", Some("A")),
        ])
        .unwrap()
    }

    #[test]
    fn basic_build_and_depth() {
        let t = build_taxonomy(&[edge("root", None), edge("A", Some("root")), edge("B", Some("root"))])
            .unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t.depth("A"), Some(1));
        assert_eq!(t.root_id(), "root");
    }

    #[test]
    fn cycle_detected() {
        let err = build_taxonomy(&[edge("root", None), edge("A", Some("B")), edge("B", Some("A"))])
            .unwrap_err();
        assert!(matches!(err, TaxonomyError::Cycle(_)));
    }

    #[test]
    fn multiple_roots_detected() {
        let err = build_taxonomy(&[edge("r1", None), edge("r2", None)]).unwrap_err();
        assert!(matches!(err, TaxonomyError::MultipleRoots(_, _)));
    }

    #[test]
    fn orphan_and_duplicate_detected() {
        let err = build_taxonomy(&[edge("root", None), edge("A", Some("ghost"))]).unwrap_err();
        assert!(matches!(err, TaxonomyError::OrphanParent { .. }));
        let err = build_taxonomy(&[edge("root", None), edge("A", Some("root")), edge("A", Some("root"))])
            .unwrap_err();
        assert!(matches!(err, TaxonomyError::DuplicateNode(_)));
    }

    #[test]
    fn lca_identity_siblings_and_chain() {
        let t = small_tree();
        assert_eq!(t.lca(["A1"]).unwrap(), "A1");
        assert_eq!(t.lca(["A", "B"]).unwrap(), "root");
        assert_eq!(t.lca(["A", "A1"]).unwrap(), "A");
        assert_eq!(t.lca(["A1", "A2"]).unwrap(), "A");
        assert_eq!(t.lca(["A1", "A2", "B"]).unwrap(), "root");
    }

    #[test]
    fn lca_empty_and_unknown_error() {
        let t = small_tree();
        assert!(matches!(t.lca([]), Err(TaxonomyError::EmptyTaxonSet)));
        assert!(matches!(t.lca(["nope"]), Err(TaxonomyError::UnknownTaxon(_))));
    }

    #[test]
    fn classify_threshold_and_sorting() {
        let t = small_tree();
        let mut hits = BTreeMap::new();
        hits.insert("r2".to_string(), vec!["A1".to_string(), "A2".to_string()]);
        hits.insert("r1".to_string(), vec!["A1".to_string()]);
        hits.insert("r3".to_string(), vec![]);
        let out = classify_reads(&hits, &t, 2).unwrap();
        assert_eq!(out.len(), 3);
        assert_eq!(out[0].read_id, "r1");
        assert_eq!(out[0].taxon, None); // 1 hit < min_hits 2
        assert_eq!(out[1].taxon.as_deref(), Some("A"));
        assert_eq!(out[2].taxon, None); // no hits
    }

    #[test]
    fn hierarchy_counts_accumulate() {
        let t = small_tree();
        let assignments = vec![
            TaxAssignment { read_id: "r1".into(), taxon: Some("A".into()), n_hits: 1 },
            TaxAssignment { read_id: "r2".into(), taxon: Some("A".into()), n_hits: 1 },
            TaxAssignment { read_id: "r3".into(), taxon: Some("A".into()), n_hits: 1 },
            TaxAssignment { read_id: "r4".into(), taxon: Some("root".into()), n_hits: 2 },
            TaxAssignment { read_id: "r5".into(), taxon: None, n_hits: 0 },
        ];
        let c = hierarchy_counts(&assignments, &t).unwrap();
        assert_eq!(c.per_node["root"], NodeCounts { direct: 1, cumulative: 4 });
        assert_eq!(c.per_node["A"], NodeCounts { direct: 3, cumulative: 3 });
        assert_eq!(c.unclassified, 1);
    }

    #[test]
    fn hierarchy_counts_empty_is_all_zero() {
        let t = small_tree();
        let c = hierarchy_counts(&[], &t).unwrap();
        assert!(c.per_node.values().all(|n| n.direct == 0 && n.cumulative == 0));
        assert_eq!(c.unclassified, 0);
    }

    #[test]
    fn text_rendering_shape() {
        let t = small_tree();
        let c = hierarchy_counts(
            &[TaxAssignment { read_id: "r".into(), taxon: Some("A1".into()), n_hits: 1 }],
            &t,
        )
        .unwrap();
        let mut buf = Vec::new();
        write_hierarchy_text(&t, &c, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "name-root\t0\t1");
        assert_eq!(lines[1], "  name-A\t0\t1");
        assert_eq!(lines[2], "    name-A1\t1\t1");
        assert_eq!(*lines.last().unwrap(), "UNCLASSIFIED\t0\t0");
    }

    #[test]
    fn tsv_parsers() {
        let edges = parse_taxonomy_tsv("#h\nroot\t\tRoot\tno rank\nA\troot\tAlpha\tphylum\n".as_bytes())
            .unwrap();
        assert_eq!(edges.len(), 2);
        assert_eq!(edges[0].parent, None);
        let hits = parse_hits_tsv("r1\tA\nr1\troot\nr2\tA\n".as_bytes()).unwrap();
        assert_eq!(hits["r1"], vec!["A".to_string(), "root".to_string()]);
        assert!(parse_hits_tsv("bad row\n".as_bytes()).is_err());
    }
}
