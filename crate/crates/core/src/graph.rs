//! Undirected weighted graphs, their text formats, and the preprocessing
//! steps (k-core peeling, largest component) applied before analysis.
//!
//! Node ids are dense `0..N`. The original integer labels are kept only so
//! that loaders and writers can translate at the I/O boundary.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::fmt_f64;

#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    adjacency: Vec<Vec<(usize, f64)>>,
    degree: Vec<f64>,
    labels: Vec<u64>,
}

impl Graph {
    /// Builds a graph from undirected edges over `labels.len()` nodes.
    ///
    /// Each `(u, v, w)` is inserted in both directions (once for a self-loop).
    /// Repeated edges are summed. Weights must be finite and positive.
    pub fn from_edges(labels: Vec<u64>, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let n = labels.len();
        let mut merged: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for &(u, v, w) in edges {
            if u >= n || v >= n {
                return Err(Error::validation(format!(
                    "edge ({u}, {v}) references a node outside 0..{n}"
                )));
            }
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::validation(format!(
                    "edge ({u}, {v}) has non-positive weight {w}"
                )));
            }
            *merged.entry((u.min(v), u.max(v))).or_insert(0.0) += w;
        }
        let mut adjacency = vec![Vec::new(); n];
        for (&(u, v), &w) in &merged {
            adjacency[u].push((v, w));
            if u != v {
                adjacency[v].push((u, w));
            }
        }
        Ok(Self::from_adjacency(adjacency, labels))
    }

    /// Builds a graph from unit-weight edges without validation; callers
    /// guarantee ids are in range, and no pair repeats.
    pub(crate) fn from_simple_edges(n: usize, edges: &[(usize, usize)]) -> Self {
        let mut adjacency = vec![Vec::new(); n];
        for &(u, v) in edges {
            adjacency[u].push((v, 1.0));
            if u != v {
                adjacency[v].push((u, 1.0));
            }
        }
        Self::from_adjacency(adjacency, (0..n as u64).collect())
    }

    fn from_adjacency(mut adjacency: Vec<Vec<(usize, f64)>>, labels: Vec<u64>) -> Self {
        for row in &mut adjacency {
            row.sort_by_key(|&(j, _)| j);
        }
        let degree = adjacency
            .iter()
            .map(|row| row.iter().map(|&(_, w)| w).sum())
            .collect();
        Graph {
            adjacency,
            degree,
            labels,
        }
    }

    pub fn node_count(&self) -> usize {
        self.adjacency.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adjacency.is_empty()
    }

    /// Number of undirected edges, self-loops included.
    pub fn edge_count(&self) -> usize {
        self.adjacency
            .iter()
            .enumerate()
            .map(|(i, row)| row.iter().filter(|&&(j, _)| j >= i).count())
            .sum()
    }

    /// Neighbors of `i` with edge weights, sorted by neighbor id.
    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.adjacency[i]
    }

    /// Sum of incident edge weights.
    pub fn degree(&self, i: usize) -> f64 {
        self.degree[i]
    }

    pub fn degrees(&self) -> &[f64] {
        &self.degree
    }

    /// Number of incident edges, ignoring weights.
    pub fn unweighted_degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    pub fn max_unweighted_degree(&self) -> usize {
        self.adjacency.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn labels(&self) -> &[u64] {
        &self.labels
    }

    pub fn label_index(&self) -> HashMap<u64, usize> {
        self.labels
            .iter()
            .enumerate()
            .map(|(i, &l)| (l, i))
            .collect()
    }

    /// Checks that every edge appears in both directions with a
    /// bit-identical weight.
    pub fn is_symmetric(&self) -> bool {
        self.adjacency.iter().enumerate().all(|(i, row)| {
            row.iter().all(|&(j, w)| {
                self.adjacency[j]
                    .binary_search_by_key(&i, |&(k, _)| k)
                    .map(|pos| self.adjacency[j][pos].1.to_bits() == w.to_bits())
                    .unwrap_or(false)
            })
        })
    }

    /// Replaces every edge weight by 1.
    pub fn with_unit_weights(&self) -> Graph {
        let adjacency = self
            .adjacency
            .iter()
            .map(|row| row.iter().map(|&(j, _)| (j, 1.0)).collect())
            .collect();
        Self::from_adjacency(adjacency, self.labels.clone())
    }

    /// Connected components, each sorted ascending, ordered by smallest id.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let n = self.node_count();
        let mut seen = vec![false; n];
        let mut out = Vec::new();
        let mut queue = VecDeque::new();
        for start in 0..n {
            if seen[start] {
                continue;
            }
            seen[start] = true;
            queue.push_back(start);
            let mut comp = Vec::new();
            while let Some(u) = queue.pop_front() {
                comp.push(u);
                for &(v, _) in &self.adjacency[u] {
                    if !seen[v] {
                        seen[v] = true;
                        queue.push_back(v);
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }

    pub fn is_connected(&self) -> bool {
        self.node_count() > 0 && self.components().len() == 1
    }

    /// Subgraph induced by `keep` (ascending ids). Labels travel with nodes.
    pub fn induced_subgraph(&self, keep: &[usize]) -> Graph {
        let mut new_id = vec![usize::MAX; self.node_count()];
        for (k, &i) in keep.iter().enumerate() {
            new_id[i] = k;
        }
        let adjacency = keep
            .iter()
            .map(|&i| {
                self.adjacency[i]
                    .iter()
                    .filter(|&&(j, _)| new_id[j] != usize::MAX)
                    .map(|&(j, w)| (new_id[j], w))
                    .collect()
            })
            .collect();
        let labels = keep.iter().map(|&i| self.labels[i]).collect();
        Self::from_adjacency(adjacency, labels)
    }

    /// Renders the graph in the edge-list format read by [`load_edge_list`].
    pub fn to_edge_list(&self) -> String {
        let mut out = String::new();
        for (i, row) in self.adjacency.iter().enumerate() {
            for &(j, w) in row.iter().filter(|&&(j, _)| j >= i) {
                let (a, b) = (self.labels[i], self.labels[j]);
                if w == 1.0 {
                    let _ = writeln!(out, "{a} {b}");
                } else {
                    let _ = writeln!(out, "{a} {b} {}", fmt_f64(w));
                }
            }
        }
        out
    }
}

/// Reads a whitespace-separated `u v [w]` edge list.
///
/// Lines repeating the same ordered pair are summed. If both `u v` and
/// `v u` are present the two directional totals must agree, and the edge
/// gets that weight once. Labels are remapped to dense ids in ascending
/// label order.
pub fn load_edge_list(path: impl AsRef<Path>) -> Result<Graph> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    parse_edge_list(&text, path)
}

pub fn parse_edge_list(text: &str, path: &Path) -> Result<Graph> {
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut directed: BTreeMap<(u64, u64), f64> = BTreeMap::new();
    let mut nodes = std::collections::BTreeSet::new();
    for (lineno, raw) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 2 || fields.len() > 3 {
            return Err(parse_err(
                lineno,
                format!("expected `u v [w]`, found {} fields", fields.len()),
            ));
        }
        let label = |s: &str| {
            s.parse::<u64>()
                .map_err(|_| parse_err(lineno, format!("invalid node label `{s}`")))
        };
        let (u, v) = (label(fields[0])?, label(fields[1])?);
        let w = match fields.get(2) {
            Some(s) => s
                .parse::<f64>()
                .map_err(|_| parse_err(lineno, format!("invalid weight `{s}`")))?,
            None => 1.0,
        };
        if !(w.is_finite() && w > 0.0) {
            return Err(Error::validation(format!(
                "{}:{lineno}: weight must be positive, found {w}",
                path.display()
            )));
        }
        nodes.insert(u);
        nodes.insert(v);
        *directed.entry((u, v)).or_insert(0.0) += w;
    }

    let labels: Vec<u64> = nodes.into_iter().collect();
    let index: HashMap<u64, usize> = labels.iter().enumerate().map(|(i, &l)| (l, i)).collect();
    let mut edges = Vec::new();
    for (&(u, v), &w) in &directed {
        if u > v {
            if !directed.contains_key(&(v, u)) {
                edges.push((index[&u], index[&v], w));
            }
            continue;
        }
        if u < v {
            if let Some(&back) = directed.get(&(v, u)) {
                if back != w {
                    return Err(Error::validation(format!(
                        "edge {u}-{v} declared with weight {w} but {v}-{u} with weight {back}"
                    )));
                }
            }
        }
        edges.push((index[&u], index[&v], w));
    }
    Graph::from_edges(labels, &edges)
}

/// Repeatedly removes nodes with fewer than `k` distinct non-self
/// neighbors. The result may be empty.
pub fn k_core(g: &Graph, k: usize) -> Graph {
    let n = g.node_count();
    let mut deg: Vec<usize> = (0..n)
        .map(|i| g.neighbors(i).iter().filter(|&&(j, _)| j != i).count())
        .collect();
    let mut removed = vec![false; n];
    let mut stack: Vec<usize> = (0..n).filter(|&i| deg[i] < k).collect();
    for &i in &stack {
        removed[i] = true;
    }
    while let Some(u) = stack.pop() {
        for &(v, _) in g.neighbors(u) {
            if v == u || removed[v] {
                continue;
            }
            deg[v] -= 1;
            if deg[v] < k {
                removed[v] = true;
                stack.push(v);
            }
        }
    }
    let keep: Vec<usize> = (0..n).filter(|&i| !removed[i]).collect();
    g.induced_subgraph(&keep)
}

/// Largest connected component; ties go to the component holding the
/// smallest node id.
pub fn largest_connected_component(g: &Graph) -> Result<Graph> {
    if g.is_empty() {
        return Err(Error::validation("graph has no nodes"));
    }
    let comps = g.components();
    let mut best = &comps[0];
    for c in &comps[1..] {
        if c.len() > best.len() {
            best = c;
        }
    }
    Ok(g.induced_subgraph(best))
}

/// The preprocessing used for empirical networks: unit weights, 2-core,
/// largest component.
pub fn prepare_network(g: &Graph) -> Result<Graph> {
    largest_connected_component(&k_core(&g.with_unit_weights(), 2))
}

/// A real-valued feature indexed by dense node id.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeFeature {
    pub name: String,
    values: Vec<f64>,
}

impl NodeFeature {
    pub fn new(name: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::validation(format!(
                "feature value at node {i} is not finite"
            )));
        }
        Ok(NodeFeature {
            name: name.into(),
            values,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Population mean over nodes.
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub(crate) fn check_len(&self, n: usize) -> Result<()> {
        if self.values.len() != n {
            return Err(Error::validation(format!(
                "feature `{}` has {} entries but the graph has {n} nodes",
                self.name,
                self.values.len()
            )));
        }
        Ok(())
    }
}

/// Reads a `label,value` CSV aligned to the graph's labels. A first line
/// whose label does not parse as an integer is taken as a header.
pub fn load_node_feature(path: impl AsRef<Path>, g: &Graph) -> Result<NodeFeature> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "y".to_owned());
    parse_node_feature(&text, g, &name)
}

pub fn parse_node_feature(text: &str, g: &Graph, name: &str) -> Result<NodeFeature> {
    let index = g.label_index();
    let mut values = vec![None; g.node_count()];
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.splitn(2, ',');
        let label_s = parts.next().unwrap_or("").trim();
        let value_s = parts.next().map(str::trim).unwrap_or("");
        let label = match label_s.parse::<u64>() {
            Ok(l) => l,
            Err(_) if lineno == 0 => continue,
            Err(_) => {
                return Err(Error::validation(format!(
                    "line {}: invalid node label `{label_s}`",
                    lineno + 1
                )))
            }
        };
        let value: f64 = value_s.parse().map_err(|_| {
            Error::validation(format!("node {label}: value `{value_s}` is not numeric"))
        })?;
        let Some(&i) = index.get(&label) else {
            // Nodes shed by preprocessing may still be listed.
            continue;
        };
        if values[i].is_some() {
            return Err(Error::validation(format!("node {label} listed twice")));
        }
        values[i] = Some(value);
    }
    let values = values
        .into_iter()
        .enumerate()
        .map(|(i, v)| {
            v.ok_or_else(|| {
                Error::validation(format!("node {} has no feature value", g.labels()[i]))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    NodeFeature::new(name, values)
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::Graph;

    pub fn path(n: usize) -> Graph {
        let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        Graph::from_simple_edges(n, &edges)
    }

    pub fn complete(n: usize) -> Graph {
        let edges: Vec<_> = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .collect();
        Graph::from_simple_edges(n, &edges)
    }

    pub fn triangle_with_pendant() -> Graph {
        Graph::from_simple_edges(4, &[(0, 1), (1, 2), (0, 2), (2, 3)])
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    fn parse(text: &str) -> Result<Graph> {
        parse_edge_list(text, Path::new("mem"))
    }

    #[test]
    fn path_edge_list() {
        let g = parse("0 1\n1 2").unwrap();
        assert_eq!(g.node_count(), 3);
        assert_eq!(g.degrees(), &[1.0, 2.0, 1.0]);
        assert!(g.is_symmetric());
    }

    #[test]
    fn both_directions_count_once() {
        let g = parse("0 1 2.5\n1 0 2.5").unwrap();
        assert_eq!(g.edge_count(), 1);
        assert_eq!(g.neighbors(0), &[(1, 2.5)]);
        assert_eq!(g.neighbors(1), &[(0, 2.5)]);
    }

    #[test]
    fn repeated_direction_sums() {
        let g = parse("0 1\n0 1").unwrap();
        assert_eq!(g.neighbors(0), &[(1, 2.0)]);
        assert_eq!(g.degree(1), 2.0);
    }

    #[test]
    fn mismatched_directions_rejected() {
        assert!(matches!(parse("0 1 2\n1 0 3"), Err(Error::Validation(_))));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        match parse("# header\n0 1\n0 x\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            parse("0 1 2 3"),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn non_positive_weight_rejected() {
        assert!(matches!(parse("0 1 0"), Err(Error::Validation(_))));
        assert!(matches!(parse("0 1 -1.5"), Err(Error::Validation(_))));
    }

    #[test]
    fn labels_are_remapped_densely() {
        let g = parse("10 30\n30 20 # trailing comment\n").unwrap();
        assert_eq!(g.labels(), &[10, 20, 30]);
        assert_eq!(g.neighbors(2).len(), 2);
        let back = parse(&g.to_edge_list()).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn k_core_cases() {
        assert!(k_core(&path(3), 2).is_empty());
        let tri = complete(3);
        assert_eq!(k_core(&tri, 2), tri);
        let core = k_core(&triangle_with_pendant(), 2);
        assert_eq!(core.labels(), &[0, 1, 2]);
        assert_eq!(core.edge_count(), 3);
    }

    #[test]
    fn lcc_cases() {
        let tri = complete(3);
        assert_eq!(largest_connected_component(&tri).unwrap(), tri);
        let g = Graph::from_simple_edges(5, &[(0, 1), (1, 2), (0, 2), (3, 4)]);
        assert_eq!(
            largest_connected_component(&g).unwrap().labels(),
            &[0, 1, 2]
        );
        let g = Graph::from_simple_edges(5, &[(3, 4), (1, 2), (0, 0)]);
        // sizes 1, 2, 2: tie between {1,2} and {3,4} goes to {1,2}
        assert_eq!(largest_connected_component(&g).unwrap().labels(), &[1, 2]);
        let g = Graph::from_simple_edges(4, &[(0, 1), (2, 3)]);
        assert_eq!(largest_connected_component(&g).unwrap().labels(), &[0, 1]);
        assert!(largest_connected_component(&Graph::from_simple_edges(0, &[])).is_err());
    }

    #[test]
    fn feature_loading() {
        let g = path(3);
        let f = parse_node_feature("label,value\n0,1\n1,1\n2,1\n", &g, "c").unwrap();
        assert_eq!(f.values(), &[1.0, 1.0, 1.0]);
        let err = parse_node_feature("0,1\n2,0\n", &g, "c").unwrap_err();
        assert!(err.to_string().contains("node 1"), "{err}");
        let err = parse_node_feature("0,1\n0,1\n1,0\n2,0\n", &g, "c").unwrap_err();
        assert!(err.to_string().contains("node 0"), "{err}");
        let err = parse_node_feature("0,1\n1,yes\n2,0\n", &g, "c").unwrap_err();
        assert!(err.to_string().contains("node 1"), "{err}");
    }

    #[test]
    fn prepare_network_drops_periphery() {
        // triangle 0-1-2, tail 2-3-4, separate square 5..8
        let g = Graph::from_edges(
            (0..9).collect(),
            &[
                (0, 1, 2.0),
                (1, 2, 1.0),
                (0, 2, 1.0),
                (2, 3, 1.0),
                (3, 4, 1.0),
                (5, 6, 1.0),
                (6, 7, 1.0),
                (7, 8, 1.0),
                (8, 5, 1.0),
            ],
        )
        .unwrap();
        let p = prepare_network(&g).unwrap();
        assert_eq!(p.labels(), &[5, 6, 7, 8]);
        assert!(p.degrees().iter().all(|&d| d == 2.0));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_graph() -> impl Strategy<Value = Graph> {
            (1usize..25).prop_flat_map(|n| {
                proptest::collection::vec((0..n, 0..n, 1u32..4), 0..60).prop_map(move |es| {
                    let edges: Vec<_> = es.iter().map(|&(u, v, w)| (u, v, w as f64)).collect();
                    Graph::from_edges((0..n as u64).collect(), &edges).unwrap()
                })
            })
        }

        proptest! {
            #[test]
            fn symmetric(g in arb_graph()) {
                prop_assert!(g.is_symmetric());
                let text = g.to_edge_list();
                if !text.is_empty() {
                    prop_assert!(parse(&text).unwrap().is_symmetric());
                }
            }

            #[test]
            fn k_core_idempotent(g in arb_graph(), k in 1usize..4) {
                let once = k_core(&g, k);
                prop_assert_eq!(k_core(&once, k), once);
            }

            #[test]
            fn lcc_is_connected(g in arb_graph()) {
                let c = largest_connected_component(&g).unwrap();
                prop_assert_eq!(c.components().len(), 1);
            }
        }
    }
}
