//! Structure profiling, λ-weighted structure sampling, masked importance
//! localization and the six control-flow rewrites.

mod importance;
mod rewrite;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::frontend::ast::{Stmt, StmtKind};
use crate::frontend::{NodeId, SourceUnit};

pub use importance::{candidate_sites, compute_importance, compute_importance_partial, ImportanceMap};
pub use rewrite::{apply_transform, check_applicable};

pub const DEFAULT_LAMBDA: f64 = 1.8;
pub const DEFAULT_SITE_CAP: usize = 32;
/// Draws attempted before sampling gives up on finding an applicable site.
pub const MAX_KIND_DRAWS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum StructureKind {
    For,
    While,
    DoWhile,
    IfElseChain,
    IfWithElse,
    Switch,
    DeclBlock,
    AssignBlock,
}

impl StructureKind {
    pub const ALL: [StructureKind; 8] = [
        StructureKind::For,
        StructureKind::While,
        StructureKind::DoWhile,
        StructureKind::IfElseChain,
        StructureKind::IfWithElse,
        StructureKind::Switch,
        StructureKind::DeclBlock,
        StructureKind::AssignBlock,
    ];

    pub fn is_control_flow(self) -> bool {
        !matches!(self, StructureKind::DeclBlock | StructureKind::AssignBlock)
    }

    /// The rewrite that consumes this structure, if any.
    pub fn op(self) -> Option<OpKind> {
        Some(match self {
            StructureKind::For => OpKind::For2While,
            StructureKind::While => OpKind::While2For,
            StructureKind::DoWhile => OpKind::ChDo,
            StructureKind::IfElseChain => OpKind::ChIfElse2Else,
            StructureKind::IfWithElse => OpKind::ChElse2ElseIf,
            StructureKind::Switch => OpKind::ChSwitch,
            StructureKind::DeclBlock | StructureKind::AssignBlock => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum OpKind {
    #[serde(rename = "for2while")]
    For2While,
    #[serde(rename = "while2for")]
    While2For,
    #[serde(rename = "ifelse2else")]
    ChIfElse2Else,
    #[serde(rename = "else2elseif")]
    ChElse2ElseIf,
    #[serde(rename = "switch2if")]
    ChSwitch,
    #[serde(rename = "do2while")]
    ChDo,
}

impl OpKind {
    pub const ALL: [OpKind; 6] =
        [OpKind::For2While, OpKind::While2For, OpKind::ChIfElse2Else, OpKind::ChElse2ElseIf, OpKind::ChSwitch, OpKind::ChDo];

    /// The structure kind this op rewrites.
    pub fn source_kind(self) -> StructureKind {
        match self {
            OpKind::For2While => StructureKind::For,
            OpKind::While2For => StructureKind::While,
            OpKind::ChDo => StructureKind::DoWhile,
            OpKind::ChIfElse2Else => StructureKind::IfElseChain,
            OpKind::ChElse2ElseIf => StructureKind::IfWithElse,
            OpKind::ChSwitch => StructureKind::Switch,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            OpKind::For2While => "for2while",
            OpKind::While2For => "while2for",
            OpKind::ChIfElse2Else => "ifelse2else",
            OpKind::ChElse2ElseIf => "else2elseif",
            OpKind::ChSwitch => "switch2if",
            OpKind::ChDo => "do2while",
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OpKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.to_ascii_lowercase().replace(['-', '_'], "");
        let op = match lower.as_str() {
            "for2while" | "op1" => OpKind::For2While,
            "while2for" | "op2" => OpKind::While2For,
            "ifelse2else" | "chifelse2else" | "op3" => OpKind::ChIfElse2Else,
            "else2elseif" | "chelse2elseif" | "op4" => OpKind::ChElse2ElseIf,
            "switch2if" | "chswitch" | "op5" => OpKind::ChSwitch,
            "do2while" | "chdo" | "op6" => OpKind::ChDo,
            _ => return Err(format!("unknown transform `{s}`")),
        };
        Ok(op)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TransformOp {
    pub op: OpKind,
    pub site: NodeId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum InapplicableReason {
    SiteNotFound,
    WrongNodeKind,
    /// A `continue` bound to the loop would skip the hoisted step.
    ContinueInBody,
    /// A body declaration would capture a name used by the hoisted step.
    StepShadowed,
    /// `break` or `continue` bound to a do-loop has no target in the copied prefix.
    LoopControlInBody,
    /// A non-final switch clause falls through into the next.
    Fallthrough,
    /// A `break` bound to the switch sits somewhere other than a clause end.
    NestedBreak,
    /// The scrutinee would be evaluated more than once.
    ScrutineeSideEffects,
    /// A clause uses a name declared in a different clause.
    CrossCaseDecl,
}

impl fmt::Display for InapplicableReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            InapplicableReason::SiteNotFound => "site not found",
            InapplicableReason::WrongNodeKind => "node kind does not match the transform",
            InapplicableReason::ContinueInBody => "loop body contains a continue",
            InapplicableReason::StepShadowed => "body declaration shadows a name used by the step",
            InapplicableReason::LoopControlInBody => "loop body contains break or continue",
            InapplicableReason::Fallthrough => "switch clause falls through",
            InapplicableReason::NestedBreak => "break inside a switch clause is not at its end",
            InapplicableReason::ScrutineeSideEffects => "switch scrutinee has side effects",
            InapplicableReason::CrossCaseDecl => "declaration shared across switch clauses",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TransformError {
    #[error("no transformable structure in unit")]
    NoStructures,
    #[error("no applicable site after {0} draws")]
    NoApplicableSite(usize),
    #[error("structure kind {0:?} has no rewrite")]
    NoOpForKind(StructureKind),
    #[error("{op} is inapplicable at node {site}: {reason}")]
    Inapplicable { op: OpKind, site: NodeId, reason: InapplicableReason },
    #[error("invalid lambda {0}")]
    BadLambda(f64),
    #[error("rewritten program does not reparse: {0}")]
    Reparse(String),
}

/// Per-kind structure counts and the sampling distribution over them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureProfile {
    pub counts: BTreeMap<StructureKind, usize>,
    pub lambda: f64,
    /// Only kinds with a positive count appear.
    pub distribution: BTreeMap<StructureKind, f64>,
    /// Node ids of every occurrence, ascending.
    pub sites: BTreeMap<StructureKind, Vec<NodeId>>,
}

impl StructureProfile {
    /// Builds the distribution from raw counts: control-flow kinds weigh
    /// `λ·count`, the rest weigh `count`.
    pub fn from_counts(counts: BTreeMap<StructureKind, usize>, lambda: f64) -> Result<Self, TransformError> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(TransformError::BadLambda(lambda));
        }
        let weight = |k: StructureKind, c: usize| if k.is_control_flow() { lambda * c as f64 } else { c as f64 };
        let total: f64 = counts.iter().map(|(k, c)| weight(*k, *c)).sum();
        let distribution = counts
            .iter()
            .filter(|(_, c)| **c > 0)
            .map(|(k, c)| (*k, weight(*k, *c) / total))
            .collect();
        Ok(Self { counts, lambda, distribution, sites: BTreeMap::new() })
    }

    pub fn count(&self, kind: StructureKind) -> usize {
        self.counts.get(&kind).copied().unwrap_or(0)
    }

    /// Draws a structure kind by inverse CDF over the distribution.
    pub fn draw_kind<R: Rng + ?Sized>(&self, rng: &mut R) -> StructureKind {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut last = StructureKind::For;
        for (k, p) in &self.distribution {
            acc += p;
            last = *k;
            if u < acc {
                return *k;
            }
        }
        last
    }
}

/// Every occurrence of every structure kind, keyed by kind.
pub fn find_structures(unit: &SourceUnit) -> BTreeMap<StructureKind, Vec<NodeId>> {
    let mut sites: BTreeMap<StructureKind, Vec<NodeId>> = BTreeMap::new();
    let mut add = |k, id| sites.entry(k).or_default().push(id);
    unit.ast.body.walk(&mut |s| {
        match &s.kind {
            StmtKind::For { .. } => add(StructureKind::For, s.id),
            StmtKind::While { .. } => add(StructureKind::While, s.id),
            StmtKind::DoWhile { .. } => add(StructureKind::DoWhile, s.id),
            StmtKind::Switch { .. } => add(StructureKind::Switch, s.id),
            StmtKind::If { els: Some(e), .. } => match &e.kind {
                StmtKind::If { .. } => add(StructureKind::IfElseChain, s.id),
                StmtKind::Block(inner) if inner.len() == 1 && matches!(inner[0].kind, StmtKind::If { .. }) => {
                    add(StructureKind::IfWithElse, s.id)
                }
                _ => {}
            },
            _ => {}
        }
        for list in statement_lists(s) {
            let mut prev: Option<StructureKind> = None;
            for st in list {
                let kind = match &st.kind {
                    StmtKind::Decl(_) => Some(StructureKind::DeclBlock),
                    StmtKind::Expr(crate::frontend::ast::Expr::Assign { .. }) => Some(StructureKind::AssignBlock),
                    _ => None,
                };
                if let Some(k) = kind {
                    if prev != Some(k) {
                        add(k, st.id);
                    }
                }
                prev = kind;
            }
        }
    });
    for v in sites.values_mut() {
        v.sort_unstable();
    }
    sites
}

/// Statement lists directly owned by `s` (a block, or each switch clause).
pub(crate) fn statement_lists(s: &Stmt) -> Vec<&[Stmt]> {
    match &s.kind {
        StmtKind::Block(stmts) => vec![stmts.as_slice()],
        StmtKind::Switch { clauses, .. } => clauses.iter().map(|c| c.body.as_slice()).collect(),
        _ => Vec::new(),
    }
}

/// Counts structures and builds the sampling distribution.
pub fn extract_profile(unit: &SourceUnit, lambda: f64) -> Result<StructureProfile, TransformError> {
    let sites = find_structures(unit);
    let counts: BTreeMap<StructureKind, usize> =
        StructureKind::ALL.iter().map(|k| (*k, sites.get(k).map_or(0, Vec::len))).collect();
    if !counts.iter().any(|(k, c)| k.is_control_flow() && *c > 0) {
        return Err(TransformError::NoStructures);
    }
    let mut profile = StructureProfile::from_counts(counts, lambda)?;
    profile.sites = sites;
    Ok(profile)
}

/// Draws a structure kind, then picks its most important applicable site
/// not listed in `exclude`. Kinds without an applicable site are redrawn,
/// up to [`MAX_KIND_DRAWS`] draws in total.
pub fn sample_transform<R: Rng + ?Sized>(
    unit: &SourceUnit,
    profile: &StructureProfile,
    importance: &ImportanceMap,
    exclude: &BTreeSet<TransformOp>,
    rng: &mut R,
) -> Result<TransformOp, TransformError> {
    for draw in 0..MAX_KIND_DRAWS {
        let kind = profile.draw_kind(rng);
        let Some(op) = kind.op() else {
            return Err(TransformError::NoOpForKind(kind));
        };
        let sites = profile.sites.get(&kind).map(Vec::as_slice).unwrap_or(&[]);
        let mut ranked: Vec<(Option<f64>, NodeId)> = sites
            .iter()
            .filter(|site| {
                let t = TransformOp { op, site: **site };
                !exclude.contains(&t) && check_applicable(unit, t).is_ok()
            })
            .map(|site| (importance.subtree_score(unit, *site), *site))
            .collect();
        ranked.sort_by(|a, b| match (a.0, b.0) {
            (Some(x), Some(y)) => y.total_cmp(&x).then(a.1.cmp(&b.1)),
            (Some(_), None) => std::cmp::Ordering::Less,
            (None, Some(_)) => std::cmp::Ordering::Greater,
            (None, None) => a.1.cmp(&b.1),
        });
        if let Some((_, site)) = ranked.first() {
            return Ok(TransformOp { op, site: *site });
        }
        log::debug!("draw {draw}: no applicable {kind:?} site, resampling");
    }
    Err(TransformError::NoApplicableSite(MAX_KIND_DRAWS))
}

/// Parent links of the statement tree, used for subtree and distance queries.
pub(crate) fn parent_map(unit: &SourceUnit) -> HashMap<NodeId, NodeId> {
    let mut parents = HashMap::new();
    unit.ast.body.walk(&mut |s| {
        for c in s.children() {
            parents.insert(c.id, s.id);
        }
    });
    parents
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::parse;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn counts(pairs: &[(StructureKind, usize)]) -> BTreeMap<StructureKind, usize> {
        pairs.iter().copied().collect()
    }

    #[test]
    fn eq3_worked_example() {
        let p = StructureProfile::from_counts(
            counts(&[(StructureKind::For, 1), (StructureKind::While, 1), (StructureKind::DeclBlock, 2)]),
            1.8,
        )
        .unwrap();
        assert!((p.distribution[&StructureKind::For] - 1.8 / 5.6).abs() < 1e-12);
        assert!((p.distribution[&StructureKind::While] - 1.8 / 5.6).abs() < 1e-12);
        assert!((p.distribution[&StructureKind::DeclBlock] - 2.0 / 5.6).abs() < 1e-12);
        assert!((p.distribution[&StructureKind::DeclBlock] - 0.3571).abs() < 1e-4);
    }

    #[test]
    fn lambda_cancels_for_pure_control_flow() {
        for lambda in [1.0, 1.8, 3.0] {
            let p = StructureProfile::from_counts(counts(&[(StructureKind::For, 2), (StructureKind::Switch, 2)]), lambda)
                .unwrap();
            assert!((p.distribution[&StructureKind::For] - 0.5).abs() < 1e-12);
        }
        let single = StructureProfile::from_counts(counts(&[(StructureKind::For, 2)]), 1.8).unwrap();
        assert_eq!(single.distribution[&StructureKind::For], 1.0);
    }

    #[test]
    fn rejects_bad_lambda() {
        assert!(StructureProfile::from_counts(counts(&[(StructureKind::For, 1)]), 0.0).is_err());
        assert!(StructureProfile::from_counts(counts(&[(StructureKind::For, 1)]), -1.0).is_err());
    }

    #[test]
    fn profile_counts_every_kind() {
        let u = parse(
            "int f(int a){ int i; int s = 0; s = 1; s = 2; for(i=0;i<3;i++){s++;} while(s>0){s--;} \
             do { s++; } while (s < 2); if (a) { s = 1; } else if (a > 1) { s = 2; } \
             if (a) { s = 3; } else { if (s) { s = 4; } } switch (a) { case 1: s = 5; break; default: s = 6; } return s; }",
        )
        .unwrap();
        let p = extract_profile(&u, 1.8).unwrap();
        for k in StructureKind::ALL {
            // every braced branch holds its own single-assignment block
            let expect = if k == StructureKind::AssignBlock { 7 } else { 1 };
            assert_eq!(p.count(k), expect, "{k:?}");
        }
        let sum: f64 = p.distribution.values().sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn no_structures_error() {
        let u = parse("int f(){int a = 1; a = 2; return a;}").unwrap();
        assert_eq!(extract_profile(&u, 1.8), Err(TransformError::NoStructures));
    }

    #[test]
    fn forced_draw_picks_the_only_site() {
        let u = parse("int f(){int i; int s = 0; for(i=0;i<10;i++){s += i;} return s;}").unwrap();
        let mut p = extract_profile(&u, 1.8).unwrap();
        p.distribution = [(StructureKind::For, 1.0)].into_iter().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let op = sample_transform(&u, &p, &ImportanceMap::default(), &BTreeSet::new(), &mut rng).unwrap();
        assert_eq!(op, TransformOp { op: OpKind::For2While, site: p.sites[&StructureKind::For][0] });
    }

    #[test]
    fn inapplicable_kind_fails_after_resampling() {
        let u = parse("int f(int i){for(i=0;i<10;i++){ if (i) continue; } return 0;}").unwrap();
        let p = extract_profile(&u, 1.8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let err = sample_transform(&u, &p, &ImportanceMap::default(), &BTreeSet::new(), &mut rng).unwrap_err();
        assert_eq!(err, TransformError::NoApplicableSite(MAX_KIND_DRAWS));
    }

    #[test]
    fn op_names_round_trip() {
        for op in OpKind::ALL {
            assert_eq!(op.name().parse::<OpKind>().unwrap(), op);
            assert_eq!(op.source_kind().op(), Some(op));
        }
    }
}
