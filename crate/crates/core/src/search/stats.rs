use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{SearchTrace, SearchTree};
use crate::llm::Action;

/// Percentages of generate / improve / fix edges.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ActionShare {
    pub generate: f64,
    pub improve: f64,
    pub fix: f64,
}

impl ActionShare {
    fn from_actions(actions: impl IntoIterator<Item = Action>) -> Self {
        let mut counts = [0usize; 3];
        for a in actions {
            counts[a as usize] += 1;
        }
        let total: usize = counts.iter().sum();
        if total == 0 {
            return Self::default();
        }
        let pct = |c: usize| 100.0 * c as f64 / total as f64;
        Self {
            generate: pct(counts[0]),
            improve: pct(counts[1]),
            fix: pct(counts[2]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub nodes: usize,
    pub overall: ActionShare,
    pub best_path: ActionShare,
    pub path_length: usize,
    pub tree_depth: usize,
}

impl StatsReport {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<14}{:>10}{:>10}{:>10}",
            "", "generate", "improve", "fix"
        );
        for (name, s) in [("all nodes", &self.overall), ("best path", &self.best_path)] {
            let _ = writeln!(
                out,
                "{:<14}{:>9.1}%{:>9.1}%{:>9.1}%",
                name, s.generate, s.improve, s.fix
            );
        }
        let _ = writeln!(out, "nodes         {}", self.nodes);
        let _ = writeln!(out, "path length   {}", self.path_length);
        let _ = write!(out, "tree depth    {}", self.tree_depth);
        out
    }
}

pub fn tree_statistics(trace: &SearchTrace, tree: &SearchTree) -> StatsReport {
    let expanded = tree.nodes.iter().skip(1);
    let overall = ActionShare::from_actions(expanded.clone().filter_map(|n| n.incoming_action));
    let mut path = Vec::new();
    let mut cur = trace.best_node;
    while let Some(id) = cur {
        let n = &tree.nodes[id];
        if let Some(a) = n.incoming_action {
            path.push(a);
        }
        cur = n.parent;
    }
    StatsReport {
        nodes: tree.nodes.len() - 1,
        overall,
        best_path: ActionShare::from_actions(path.iter().copied()),
        path_length: path.len(),
        tree_depth: expanded.map(|n| n.depth).max().unwrap_or(0),
    }
}
