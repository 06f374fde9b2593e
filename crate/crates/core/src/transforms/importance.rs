//! Statement importance by masking: each candidate statement is replaced
//! with `;` and the victim is queried on the masked program.

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use super::{find_structures, parent_map};
use crate::frontend::ast::{Stmt, StmtKind};
use crate::frontend::{print, NodeId, SourceUnit};
use crate::victims::{VictimError, VictimHandle};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ImportanceMap {
    /// `(node_id, drop)`, sorted by drop descending then node id ascending.
    pub entries: Vec<(NodeId, f64)>,
}

impl ImportanceMap {
    pub fn from_entries(mut entries: Vec<(NodeId, f64)>) -> Self {
        entries.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        Self { entries }
    }

    pub fn drop_of(&self, id: NodeId) -> Option<f64> {
        self.entries.iter().find(|e| e.0 == id).map(|e| e.1)
    }

    /// Highest drop measured anywhere inside the subtree rooted at `site`.
    pub fn subtree_score(&self, unit: &SourceUnit, site: NodeId) -> Option<f64> {
        let root = unit.ast.find(site)?;
        let mut best: Option<f64> = None;
        root.walk(&mut |s| {
            if let Some(d) = self.drop_of(s.id) {
                best = Some(best.map_or(d, |b: f64| b.max(d)));
            }
        });
        best
    }
}

/// Statements eligible for masking, nearest to a control-flow structure
/// first (tree distance, then node id), truncated to `site_cap`.
pub fn candidate_sites(unit: &SourceUnit, site_cap: usize) -> Vec<NodeId> {
    let parents = parent_map(unit);
    let mut adj: HashMap<NodeId, Vec<NodeId>> = HashMap::new();
    for (c, p) in &parents {
        adj.entry(*c).or_default().push(*p);
        adj.entry(*p).or_default().push(*c);
    }
    let mut dist: HashMap<NodeId, usize> = HashMap::new();
    let mut queue = VecDeque::new();
    for (kind, ids) in find_structures(unit) {
        if kind.is_control_flow() {
            for id in ids {
                if dist.insert(id, 0).is_none() {
                    queue.push_back(id);
                }
            }
        }
    }
    while let Some(n) = queue.pop_front() {
        let d = dist[&n];
        for m in adj.get(&n).into_iter().flatten() {
            if !dist.contains_key(m) {
                dist.insert(*m, d + 1);
                queue.push_back(*m);
            }
        }
    }
    // the function body block itself is not a maskable statement
    let mut sites: Vec<(usize, NodeId)> =
        parents.keys().map(|id| (dist.get(id).copied().unwrap_or(usize::MAX), *id)).collect();
    sites.sort_unstable();
    sites.into_iter().take(site_cap).map(|(_, id)| id).collect()
}

fn mask(unit: &SourceUnit, site: NodeId) -> String {
    fn go(s: &mut Stmt, site: NodeId) -> bool {
        if s.id == site {
            s.kind = StmtKind::Empty;
            return true;
        }
        match &mut s.kind {
            StmtKind::Block(stmts) => stmts.iter_mut().any(|c| go(c, site)),
            StmtKind::If { then, els, .. } => go(then, site) || els.as_mut().is_some_and(|e| go(e, site)),
            StmtKind::For { body, .. } | StmtKind::While { body, .. } | StmtKind::DoWhile { body, .. } => go(body, site),
            StmtKind::Switch { clauses, .. } => clauses.iter_mut().any(|c| c.body.iter_mut().any(|s| go(s, site))),
            _ => false,
        }
    }
    let mut ast = unit.ast.clone();
    go(&mut ast.body, site);
    print(&ast)
}

/// Measures the true-class confidence drop for up to `site_cap` masked
/// statements: one baseline query plus one query per site.
pub fn compute_importance(
    unit: &SourceUnit,
    victim: &mut VictimHandle,
    true_label: u8,
    site_cap: usize,
) -> Result<ImportanceMap, VictimError> {
    let (map, err) = compute_importance_partial(unit, victim, true_label, site_cap);
    match err {
        Some(e) => Err(e),
        None => Ok(map),
    }
}

/// Like [`compute_importance`] but keeps whatever was measured before an
/// error (typically budget exhaustion), returning the error alongside.
pub fn compute_importance_partial(
    unit: &SourceUnit,
    victim: &mut VictimHandle,
    true_label: u8,
    site_cap: usize,
) -> (ImportanceMap, Option<VictimError>) {
    let base = match victim.predict(&print(&unit.ast)) {
        Ok(v) => v.p_true(true_label),
        Err(e) => return (ImportanceMap::default(), Some(e)),
    };
    let sites = candidate_sites(unit, site_cap.max(1));
    let masked: Vec<String> = sites.iter().map(|s| mask(unit, *s)).collect();
    let (verdicts, err) = victim.predict_many(&masked);
    let entries = sites.iter().zip(verdicts).map(|(site, v)| (*site, base - v.p_true(true_label))).collect();
    (ImportanceMap::from_entries(entries), err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::parse;
    use crate::victims::VictimSpec;

    const UNIT: &str = "int f(int a){int s = 0; int i; for(i=0;i<a;i++){s += i;} print(s); return s;}";

    #[test]
    fn ordering_and_ties() {
        let m = ImportanceMap::from_entries(vec![(5, 0.1), (2, 0.3), (3, 0.1), (1, 0.0)]);
        assert_eq!(m.entries.iter().map(|e| e.0).collect::<Vec<_>>(), [2, 3, 5, 1]);
    }

    #[test]
    fn sites_nearest_structures_first() {
        let u = parse(UNIT).unwrap();
        let sites = candidate_sites(&u, 32);
        // the for loop itself, then its body block and siblings
        let for_id = u.ast.body_stmts()[2].id;
        assert_eq!(sites[0], for_id);
        assert_eq!(sites.len(), u.ast.statement_count() - 1);
        assert_eq!(candidate_sites(&u, 1), vec![for_id]);
    }

    #[test]
    fn constant_victim_gives_zero_drops() {
        let u = parse(UNIT).unwrap();
        let mut v = VictimSpec::parse("constant:0.5").unwrap().connect().unwrap();
        let m = compute_importance(&u, &mut v, 1, 32).unwrap();
        assert!(m.entries.iter().all(|e| e.1 == 0.0));
        assert_eq!(v.queries(), 1 + m.entries.len() as u64);
    }

    #[test]
    fn site_cap_one_costs_two_queries() {
        let u = parse(UNIT).unwrap();
        let mut v = VictimSpec::parse("constant:0.7").unwrap().connect().unwrap();
        let m = compute_importance(&u, &mut v, 1, 1).unwrap();
        assert_eq!(m.entries.len(), 1);
        assert_eq!(v.queries(), 2);
    }

    #[test]
    fn budget_exhaustion_keeps_partial_map() {
        let u = parse(UNIT).unwrap();
        let mut v = VictimSpec::parse("constant:0.7").unwrap().connect().unwrap().with_budget(3);
        let (m, err) = compute_importance_partial(&u, &mut v, 1, 32);
        assert_eq!(m.entries.len(), 2);
        assert_eq!(err, Some(VictimError::BudgetExhausted));
        assert_eq!(v.queries(), 3);
    }
}
