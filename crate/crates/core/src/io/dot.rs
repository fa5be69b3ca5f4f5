//! Graphviz export of the negotiation graph and the reachability graph.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::model::{AtomId, Negotiation, OutcomeName};
use crate::semantics::ReachabilityGraph;
use crate::structure::negotiation_graph;

fn quote(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

/// One node per atom, one edge per pair `n -> n'` of the negotiation graph,
/// labelled with the outcomes that induce it.
pub fn graph_to_dot(neg: &Negotiation) -> String {
    let g = negotiation_graph(neg);
    let mut labels: BTreeMap<(&AtomId, &AtomId), Vec<&OutcomeName>> = BTreeMap::new();
    for (n, r, o) in neg.outcomes() {
        for t in o.referenced() {
            let entry = labels.entry((n, t)).or_default();
            if !entry.contains(&r) {
                entry.push(r);
            }
        }
    }
    let mut s = String::from("digraph negotiation {\n");
    for v in &g.vertices {
        let parties: Vec<String> = neg.atoms[v].parties.iter().map(|a| a.to_string()).collect();
        let mut attrs = format!("label={}", quote(&format!("{v}\n{}", parties.join(","))));
        if *v == neg.initial {
            attrs.push_str(", shape=box");
        }
        if *v == neg.final_atom {
            attrs.push_str(", peripheries=2");
        }
        writeln!(s, "  {} [{attrs}];", quote(v.as_str())).unwrap();
    }
    for (a, b) in &g.edges {
        let label: Vec<&str> = labels
            .get(&(a, b))
            .map(|v| v.iter().map(|r| r.as_str()).collect())
            .unwrap_or_default();
        writeln!(
            s,
            "  {} -> {} [label={}];",
            quote(a.as_str()),
            quote(b.as_str()),
            quote(&label.join(","))
        )
        .unwrap();
    }
    s.push_str("}\n");
    s
}

/// One node per marking, one edge per small step labelled `n,r`.
pub fn reachability_to_dot(rg: &ReachabilityGraph) -> String {
    let mut s = String::from("digraph reachability {\n");
    for (i, m) in rg.nodes.iter().enumerate() {
        let mut attrs = format!("label={}", quote(&m.to_string()));
        if i == rg.initial {
            attrs.push_str(", shape=box");
        }
        if Some(i) == rg.final_node {
            attrs.push_str(", peripheries=2");
        }
        writeln!(s, "  m{i} [{attrs}];").unwrap();
    }
    for e in &rg.edges {
        writeln!(
            s,
            "  m{} -> m{} [label={}];",
            e.source,
            e.target,
            quote(&format!("{},{}", e.atom, e.outcome))
        )
        .unwrap();
    }
    s.push_str("}\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::semantics::reachability_graph;

    fn edge_count(dot: &str) -> usize {
        dot.lines().filter(|l| l.contains("->")).count()
    }

    #[test]
    fn fdm_graph_has_four_nodes_and_a_cycle() {
        let dot = graph_to_dot(&fixtures::fdm_cyclic());
        assert_eq!(dot.lines().filter(|l| l.contains("[label=") && !l.contains("->")).count(), 4);
        assert!(dot.contains("\"n1\" -> \"n2\""));
        assert!(dot.contains("\"n2\" -> \"n1\""));
    }

    #[test]
    fn single_atom_has_no_edges() {
        let dot = graph_to_dot(&fixtures::single_atom());
        assert_eq!(edge_count(&dot), 0);
    }

    #[test]
    fn reachability_export_matches_graph() {
        let neg = fixtures::fig4_left();
        let rg = reachability_graph(&neg, 1000).unwrap();
        let dot = reachability_to_dot(&rg);
        assert_eq!(edge_count(&dot), rg.edges.len());
        assert!(rg.is_acyclic());
    }
}
