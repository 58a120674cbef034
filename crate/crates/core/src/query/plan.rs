//! The rule-based planner and the plan linter.
//!
//! Rules, applied without search:
//!
//! * one `IndexScan` per query token, structural predicate and drill
//!   constraint on every data node that owns partitions (a `Fetch` when the
//!   request has none), with a `Filter` on the same node intersecting the
//!   scans and projecting the values later operators need;
//! * `PartialTopK` on data nodes, `MergeTopK`, `FacetCount`,
//!   `GroupAggregate`, `Sort` and `IndexedNLJoin` on grid nodes;
//! * joins are always indexed nested loops, the smaller estimated side
//!   probing the other side's index (ties: the lexicographically smaller
//!   index key probes);
//! * `Persist` on cluster nodes.
//!
//! Estimates come from posting-list lengths only.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::exec::QueryContext;
use super::{
    AggregateFn, AggregateRequest, ColumnPredicate, ConnectionRequest, JoinSpec, QueryError, Request, SearchRequest,
    ViewQuery,
};
use crate::index::IndexKey;
use crate::model::{DocId, Path};
use crate::ring::{NodeId, PartitionId};
use crate::schema::{Comparator, StructuralPredicate};
use crate::views::{ColumnSource, ViewDef};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flavor {
    Data,
    Grid,
    Cluster,
}

impl Flavor {
    pub fn name(self) -> &'static str {
        match self {
            Flavor::Data => "data",
            Flavor::Grid => "grid",
            Flavor::Cluster => "cluster",
        }
    }
}

impl fmt::Display for Flavor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    IndexScan,
    Fetch,
    Filter,
    PartialTopK,
    MergeTopK,
    IndexedNLJoin,
    Sort,
    GroupAggregate,
    FacetCount,
    Persist,
}

impl OpKind {
    pub const ALL: [OpKind; 10] = [
        OpKind::IndexScan,
        OpKind::Fetch,
        OpKind::Filter,
        OpKind::PartialTopK,
        OpKind::MergeTopK,
        OpKind::IndexedNLJoin,
        OpKind::Sort,
        OpKind::GroupAggregate,
        OpKind::FacetCount,
        OpKind::Persist,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::IndexScan => "index_scan",
            OpKind::Fetch => "fetch",
            OpKind::Filter => "filter",
            OpKind::PartialTopK => "partial_top_k",
            OpKind::MergeTopK => "merge_top_k",
            OpKind::IndexedNLJoin => "indexed_nl_join",
            OpKind::Sort => "sort",
            OpKind::GroupAggregate => "group_aggregate",
            OpKind::FacetCount => "facet_count",
            OpKind::Persist => "persist",
        }
    }

    /// The flavor every instance of this operator must be tagged with.
    pub fn home(self) -> Flavor {
        match self {
            OpKind::IndexScan | OpKind::Fetch | OpKind::Filter | OpKind::PartialTopK => Flavor::Data,
            OpKind::MergeTopK | OpKind::IndexedNLJoin | OpKind::Sort | OpKind::GroupAggregate | OpKind::FacetCount => {
                Flavor::Grid
            }
            OpKind::Persist => Flavor::Cluster,
        }
    }

    pub fn is_leaf(self) -> bool {
        matches!(self, OpKind::IndexScan | OpKind::Fetch)
    }
}

impl std::str::FromStr for OpKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        OpKind::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| format!("unknown operator {s:?}"))
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// What an `IndexScan` reads.
#[derive(Clone, Debug, PartialEq)]
pub enum ScanAccess {
    /// Token postings; every posting contributes `idf` to the score.
    Term { token: String, idf: f64 },
    /// Postings of `keys` whose payload satisfies the predicate.
    Predicate { predicate: StructuralPredicate, keys: Vec<IndexKey> },
}

/// Values a `Filter` attaches to each surviving document.
#[derive(Clone, Debug, PartialEq)]
pub enum Projection {
    None,
    /// Distinct values per facet; each facet lists its synonym paths.
    Facets(Vec<Vec<Path>>),
    /// First value of the group path and of the measure path.
    Aggregate {
        group_by: Vec<Path>,
        measure: Vec<Path>,
    },
    /// A view row, kept only when it passes `selection`.
    View {
        view: String,
        selection: Vec<ColumnPredicate>,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub enum NlJoin {
    /// Match-set documents probe the `/annotation/target` path-value index.
    AnnotationTargets,
    /// Outer view rows probe the inner view column's path-value index.
    ViewColumns {
        left_view: String,
        right_view: String,
        outer_is_left: bool,
        outer_column: usize,
        inner_column: usize,
        inner_paths: Vec<Path>,
        residual: Vec<ColumnPredicate>,
    },
    /// Left view rows probe the join index.
    ViewJoinIndex { left_view: String, right_view: String, relation: String },
    /// Breadth-first expansion over references and join entries.
    Connection { a: DocId, b: DocId, max_hops: usize },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Grouping {
    Entities,
    /// `measure` names the requested path in errors.
    Aggregate {
        func: AggregateFn,
        measure: Path,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SortOrder {
    GroupValue,
    Paths,
    /// View rows by source documents, then reshaped to `columns`, picking
    /// these input positions.
    ViewRows {
        columns: Vec<String>,
        pick: Vec<usize>,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PersistTarget {
    SearchResult { name: String },
    View { name: String },
}

#[derive(Clone, Debug, PartialEq)]
pub enum Operator {
    IndexScan {
        access: ScanAccess,
        partitions: Vec<PartitionId>,
    },
    /// Reads documents of the partitions; `docs` narrows to specific ids.
    Fetch {
        partitions: Vec<PartitionId>,
        docs: Vec<DocId>,
    },
    Filter {
        projection: Projection,
    },
    PartialTopK {
        k: usize,
    },
    MergeTopK {
        k: usize,
    },
    FacetCount {
        facets: Vec<(Path, Vec<Path>)>,
    },
    IndexedNLJoin {
        join: NlJoin,
    },
    GroupAggregate {
        grouping: Grouping,
    },
    Sort {
        order: SortOrder,
    },
    Persist {
        target: PersistTarget,
    },
}

impl Operator {
    pub fn kind(&self) -> OpKind {
        match self {
            Operator::IndexScan { .. } => OpKind::IndexScan,
            Operator::Fetch { .. } => OpKind::Fetch,
            Operator::Filter { .. } => OpKind::Filter,
            Operator::PartialTopK { .. } => OpKind::PartialTopK,
            Operator::MergeTopK { .. } => OpKind::MergeTopK,
            Operator::FacetCount { .. } => OpKind::FacetCount,
            Operator::IndexedNLJoin { .. } => OpKind::IndexedNLJoin,
            Operator::GroupAggregate { .. } => OpKind::GroupAggregate,
            Operator::Sort { .. } => OpKind::Sort,
            Operator::Persist { .. } => OpKind::Persist,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlanNode {
    pub id: usize,
    pub op: Operator,
    pub flavor: Flavor,
    /// The data node that must run a data-flavor operator.
    pub node: Option<NodeId>,
    pub inputs: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QueryPlan {
    pub nodes: Vec<PlanNode>,
}

impl QueryPlan {
    fn new() -> Self {
        QueryPlan { nodes: Vec::new() }
    }

    fn add(&mut self, op: Operator, node: Option<NodeId>, inputs: Vec<usize>) -> usize {
        let id = self.nodes.len();
        let flavor = op.kind().home();
        self.nodes.push(PlanNode { id, op, flavor, node, inputs });
        id
    }

    /// Nodes no other node consumes.
    pub fn sinks(&self) -> Vec<usize> {
        let mut consumed = vec![false; self.nodes.len()];
        for n in &self.nodes {
            for i in &n.inputs {
                if let Some(c) = consumed.get_mut(*i) {
                    *c = true;
                }
            }
        }
        (0..self.nodes.len()).filter(|i| !consumed[*i]).collect()
    }

    pub fn count(&self, kind: OpKind) -> usize {
        self.nodes.iter().filter(|n| n.op.kind() == kind).count()
    }

    /// Operator kinds with their flavor tags, in plan order.
    pub fn shape(&self) -> Vec<(OpKind, Flavor)> {
        self.nodes.iter().map(|n| (n.op.kind(), n.flavor)).collect()
    }
}

impl fmt::Display for QueryPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for n in &self.nodes {
            write!(f, "#{} {}@{}", n.id, n.op.kind(), n.flavor)?;
            if let Some(node) = n.node {
                write!(f, "(n{node})")?;
            }
            if !n.inputs.is_empty() {
                let inputs: Vec<String> = n.inputs.iter().map(|i| format!("#{i}")).collect();
                write!(f, " <- {}", inputs.join(","))?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Checks acyclicity, leaf kinds and flavor tags.
pub fn lint(plan: &QueryPlan) -> Result<(), String> {
    let n = plan.nodes.len();
    if n == 0 {
        return Err("empty plan".into());
    }
    let mut indegree = vec![0usize; n];
    let mut consumers: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (pos, node) in plan.nodes.iter().enumerate() {
        if node.id != pos {
            return Err(format!("node at position {pos} carries id {}", node.id));
        }
        let kind = node.op.kind();
        if node.flavor != kind.home() {
            return Err(format!("#{pos} {kind} is tagged {} but must run on {}", node.flavor, kind.home()));
        }
        if node.inputs.is_empty() != kind.is_leaf() {
            return Err(if kind.is_leaf() {
                format!("#{pos} {kind} is a leaf operator but has inputs")
            } else {
                format!("#{pos} {kind} has no inputs; only index_scan and fetch may be leaves")
            });
        }
        if (node.flavor == Flavor::Data) != node.node.is_some() {
            return Err(format!("#{pos} {kind}: data operators, and only they, name their data node"));
        }
        for &input in &node.inputs {
            if input >= n {
                return Err(format!("#{pos} reads missing node #{input}"));
            }
            indegree[pos] += 1;
            consumers[input].push(pos);
        }
    }
    let mut ready: VecDeque<usize> = (0..n).filter(|i| indegree[*i] == 0).collect();
    let mut seen = 0;
    while let Some(i) = ready.pop_front() {
        seen += 1;
        for &c in &consumers[i] {
            indegree[c] -= 1;
            if indegree[c] == 0 {
                ready.push_back(c);
            }
        }
    }
    if seen != n {
        return Err("plan contains a cycle".into());
    }
    Ok(())
}

/// Compiles a request. The plan is a pure function of the request and the
/// posting-list lengths visible in `ctx`.
pub fn plan(ctx: &QueryContext<'_>, request: &Request) -> Result<QueryPlan, QueryError> {
    let plan = match request {
        Request::Search(req) => plan_search(ctx, req)?,
        Request::Aggregate(req) => plan_aggregate(ctx, req)?,
        Request::Connection(req) => plan_connection(ctx, req)?,
        Request::View(req) => plan_view(ctx, req)?,
        Request::Scan => plan_scan(ctx),
    };
    lint(&plan).map_err(QueryError::Lint)?;
    Ok(plan)
}

fn groups(ctx: &QueryContext<'_>) -> BTreeMap<NodeId, Vec<PartitionId>> {
    let mut out: BTreeMap<NodeId, Vec<PartitionId>> = BTreeMap::new();
    for (p, node) in ctx.placement {
        out.entry(*node).or_default().push(*p);
    }
    out
}

fn accesses(ctx: &QueryContext<'_>, req: &SearchRequest) -> Vec<ScanAccess> {
    let total = ctx.index.document_count() as f64;
    let mut out = Vec::new();
    for token in req.tokens() {
        let df = ctx.index.document_frequency(&IndexKey::token(token.as_str()));
        let idf = if df == 0 { 0.0 } else { (1.0 + total / df as f64).ln() };
        out.push(ScanAccess::Term { token, idf });
    }
    let constraints =
        req.constraints.iter().map(|c| StructuralPredicate::new(c.path.clone(), Comparator::Eq, c.value.clone()));
    for predicate in req.structural.iter().cloned().chain(constraints) {
        let paths = ctx.synonyms.expand(&predicate.path);
        // Equality on non-numeric values is exact and can use path-value
        // keys; numeric equality spans integer and decimal spellings.
        let keys = if predicate.op == Comparator::Eq && !predicate.value.is_numeric() {
            paths.into_iter().map(|p| IndexKey::path_value(p, predicate.value.clone())).collect()
        } else {
            paths.into_iter().map(IndexKey::path).collect()
        };
        out.push(ScanAccess::Predicate { predicate, keys });
    }
    out
}

/// Builds the per-data-node scan stage. Returns, per node, the node whose
/// output is the full match set.
fn scan_stage(
    ctx: &QueryContext<'_>,
    plan: &mut QueryPlan,
    access: &[ScanAccess],
    projection: &Projection,
) -> Vec<usize> {
    let mut outs = Vec::new();
    for (node, partitions) in groups(ctx) {
        let leaves: Vec<usize> = if access.is_empty() {
            vec![plan.add(Operator::Fetch { partitions: partitions.clone(), docs: Vec::new() }, Some(node), vec![])]
        } else {
            access
                .iter()
                .map(|a| {
                    plan.add(
                        Operator::IndexScan { access: a.clone(), partitions: partitions.clone() },
                        Some(node),
                        vec![],
                    )
                })
                .collect()
        };
        let out = if leaves.len() > 1 || *projection != Projection::None {
            plan.add(Operator::Filter { projection: projection.clone() }, Some(node), leaves)
        } else {
            leaves[0]
        };
        outs.push(out);
    }
    outs
}

fn plan_search(ctx: &QueryContext<'_>, req: &SearchRequest) -> Result<QueryPlan, QueryError> {
    req.validate()?;
    let mut plan = QueryPlan::new();
    let access = accesses(ctx, req);
    let projection = if req.facets.is_empty() {
        Projection::None
    } else {
        Projection::Facets(req.facets.iter().map(|f| ctx.synonyms.expand(f)).collect())
    };
    let matches = scan_stage(ctx, &mut plan, &access, &projection);
    let tops: Vec<usize> = matches
        .iter()
        .map(|&m| {
            let node = plan.nodes[m].node;
            plan.add(Operator::PartialTopK { k: req.k }, node, vec![m])
        })
        .collect();
    let mut outputs = vec![plan.add(Operator::MergeTopK { k: req.k }, None, tops)];
    if !req.facets.is_empty() {
        let facets = req.facets.iter().map(|f| (f.clone(), ctx.synonyms.expand(f))).collect();
        outputs.push(plan.add(Operator::FacetCount { facets }, None, matches.clone()));
    }
    if req.entity_facets {
        let join = plan.add(Operator::IndexedNLJoin { join: NlJoin::AnnotationTargets }, None, matches.clone());
        outputs.push(plan.add(Operator::GroupAggregate { grouping: Grouping::Entities }, None, vec![join]));
    }
    if let Some(name) = &req.materialize {
        plan.add(Operator::Persist { target: PersistTarget::SearchResult { name: name.clone() } }, None, outputs);
    }
    Ok(plan)
}

fn plan_aggregate(ctx: &QueryContext<'_>, req: &AggregateRequest) -> Result<QueryPlan, QueryError> {
    let effective = req.state.effective();
    effective.validate()?;
    let mut plan = QueryPlan::new();
    let access = accesses(ctx, &effective);
    let projection = Projection::Aggregate {
        group_by: ctx.synonyms.expand(&req.group_by),
        measure: ctx.synonyms.expand(&req.measure),
    };
    let filters = scan_stage(ctx, &mut plan, &access, &projection);
    let agg = plan.add(
        Operator::GroupAggregate { grouping: Grouping::Aggregate { func: req.func, measure: req.measure.clone() } },
        None,
        filters,
    );
    plan.add(Operator::Sort { order: SortOrder::GroupValue }, None, vec![agg]);
    Ok(plan)
}

fn plan_connection(ctx: &QueryContext<'_>, req: &ConnectionRequest) -> Result<QueryPlan, QueryError> {
    if req.a == req.b {
        return Err(QueryError::SameEndpoints);
    }
    if req.max_hops > ctx.max_hops_cap {
        return Err(QueryError::TooManyHops { max_hops: req.max_hops, cap: ctx.max_hops_cap });
    }
    let mut plan = QueryPlan::new();
    let mut leaves = Vec::new();
    for doc in [req.a, req.b] {
        if !ctx.store.contains(doc) {
            return Err(QueryError::UnknownDoc(doc));
        }
        let partition = crate::ring::partition_for(doc, ctx.store.partition_count());
        let node = ctx.placement.get(&partition).copied();
        leaves.push(plan.add(Operator::Fetch { partitions: vec![partition], docs: vec![doc] }, node, vec![]));
    }
    let join = NlJoin::Connection { a: req.a, b: req.b, max_hops: req.max_hops };
    let expand = plan.add(Operator::IndexedNLJoin { join }, None, leaves);
    plan.add(Operator::Sort { order: SortOrder::Paths }, None, vec![expand]);
    Ok(plan)
}

fn column_of(view: &ViewDef, column: &str) -> Result<usize, QueryError> {
    view.column_index(column)
        .ok_or_else(|| QueryError::UnknownColumn { view: view.name.clone(), column: column.to_string() })
}

/// Index paths usable to probe a view column, if it is path-sourced and the
/// path index knows at least one of its synonym paths.
fn probe_paths(ctx: &QueryContext<'_>, view: &ViewDef, column: usize) -> Option<Vec<Path>> {
    match &view.columns[column].source {
        ColumnSource::Path(path) => {
            let paths: Vec<Path> = ctx.synonyms.expand(path).into_iter().filter(|p| ctx.index.has_path(p)).collect();
            (!paths.is_empty()).then_some(paths)
        }
        _ => None,
    }
}

fn plan_view(ctx: &QueryContext<'_>, req: &ViewQuery) -> Result<QueryPlan, QueryError> {
    let left = ctx.views.get(&req.view).map_err(|_| QueryError::UnknownView(req.view.clone()))?;
    for predicate in &req.selection {
        column_of(left, &predicate.column)?;
    }
    if req.materialize.as_deref() == Some("") {
        return Err(QueryError::Invalid("materialize needs a non-empty name".into()));
    }
    let mut plan = QueryPlan::new();

    let Some(join) = &req.join else {
        let columns: Vec<String> = left.columns.iter().map(|c| c.name.clone()).collect();
        let (columns, pick) = pick_columns(&columns, &req.projection, &left.name)?;
        let projection = Projection::View { view: left.name.clone(), selection: req.selection.clone() };
        let filters = scan_stage(ctx, &mut plan, &[], &projection);
        let sort = plan.add(Operator::Sort { order: SortOrder::ViewRows { columns, pick } }, None, filters);
        if let Some(name) = &req.materialize {
            plan.add(Operator::Persist { target: PersistTarget::View { name: name.clone() } }, None, vec![sort]);
        }
        return Ok(plan);
    };

    let right = ctx.views.get(&join.view).map_err(|_| QueryError::UnknownView(join.view.clone()))?;
    let qualified: Vec<String> = left
        .columns
        .iter()
        .map(|c| format!("{}.{}", left.name, c.name))
        .chain(right.columns.iter().map(|c| format!("{}.{}", right.name, c.name)))
        .collect();
    let (columns, pick) = pick_columns(&qualified, &req.projection, &left.name)?;

    let (outer_view, nl, selection) = match &join.on {
        JoinSpec::OnColumns { left: lc, right: rc } => {
            let (lcol, rcol) = (column_of(left, lc)?, column_of(right, rc)?);
            let left_paths = probe_paths(ctx, left, lcol);
            let right_paths = probe_paths(ctx, right, rcol);
            let estimate = |paths: &Vec<Path>| -> usize {
                paths.iter().map(|p| ctx.index.posting_count(&IndexKey::path(p.clone()))).sum()
            };
            let key = |paths: &Vec<Path>| IndexKey::path(paths[0].clone());
            // The outer (probing) side: the only indexable side's partner, or
            // the smaller estimate when both are indexable.
            let outer_is_left = match (&left_paths, &right_paths) {
                (None, None) => return Err(QueryError::NoIndex { view: right.name.clone(), column: rc.clone() }),
                (None, Some(_)) => true,
                (Some(_), None) => false,
                (Some(l), Some(r)) => (estimate(l), key(l)) <= (estimate(r), key(r)),
            };
            let (outer_column, inner_column, inner_paths) = if outer_is_left {
                (lcol, rcol, right_paths.expect("inner side is indexable"))
            } else {
                (rcol, lcol, left_paths.expect("inner side is indexable"))
            };
            let outer = if outer_is_left { left } else { right };
            let (selection, residual) =
                if outer_is_left { (req.selection.clone(), vec![]) } else { (vec![], req.selection.clone()) };
            let nl = NlJoin::ViewColumns {
                left_view: left.name.clone(),
                right_view: right.name.clone(),
                outer_is_left,
                outer_column,
                inner_column,
                inner_paths,
                residual,
            };
            (outer, nl, selection)
        }
        JoinSpec::OnJoinIndex { relation } => {
            if relation.is_empty() {
                return Err(QueryError::Invalid("join relation must be non-empty".into()));
            }
            let nl = NlJoin::ViewJoinIndex {
                left_view: left.name.clone(),
                right_view: right.name.clone(),
                relation: relation.clone(),
            };
            (left, nl, req.selection.clone())
        }
    };
    let projection = Projection::View { view: outer_view.name.clone(), selection };
    let filters = scan_stage(ctx, &mut plan, &[], &projection);
    let joined = plan.add(Operator::IndexedNLJoin { join: nl }, None, filters);
    let sort = plan.add(Operator::Sort { order: SortOrder::ViewRows { columns, pick } }, None, vec![joined]);
    if let Some(name) = &req.materialize {
        plan.add(Operator::Persist { target: PersistTarget::View { name: name.clone() } }, None, vec![sort]);
    }
    Ok(plan)
}

fn pick_columns(
    available: &[String],
    projection: &[String],
    view: &str,
) -> Result<(Vec<String>, Vec<usize>), QueryError> {
    if projection.is_empty() {
        return Ok((available.to_vec(), (0..available.len()).collect()));
    }
    let mut pick = Vec::new();
    for name in projection {
        let i = available
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| QueryError::UnknownColumn { view: view.to_string(), column: name.clone() })?;
        pick.push(i);
    }
    Ok((projection.to_vec(), pick))
}

fn plan_scan(ctx: &QueryContext<'_>) -> QueryPlan {
    let mut plan = QueryPlan::new();
    for (node, partitions) in groups(ctx) {
        plan.add(Operator::Fetch { partitions, docs: Vec::new() }, Some(node), vec![]);
    }
    plan
}

#[cfg(test)]
mod tests {
    use super::*;

    fn node(id: usize, op: Operator, node: Option<u64>, inputs: Vec<usize>) -> PlanNode {
        PlanNode { id, flavor: op.kind().home(), op, node: node.map(NodeId), inputs }
    }

    fn fetch() -> Operator {
        Operator::Fetch { partitions: vec![PartitionId(0)], docs: vec![] }
    }

    #[test]
    fn linter_accepts_a_well_formed_plan() {
        let plan = QueryPlan {
            nodes: vec![
                node(0, fetch(), Some(1), vec![]),
                node(1, Operator::PartialTopK { k: 3 }, Some(1), vec![0]),
                node(2, Operator::MergeTopK { k: 3 }, None, vec![1]),
            ],
        };
        assert_eq!(lint(&plan), Ok(()));
        assert_eq!(plan.sinks(), vec![2]);
    }

    #[test]
    fn linter_rejects_misplaced_and_cyclic_plans() {
        let mut misplaced = QueryPlan { nodes: vec![node(0, fetch(), Some(1), vec![])] };
        misplaced.nodes[0].flavor = Flavor::Grid;
        assert!(lint(&misplaced).unwrap_err().contains("must run on data"));

        let non_leaf = QueryPlan { nodes: vec![node(0, Operator::MergeTopK { k: 1 }, None, vec![])] };
        assert!(lint(&non_leaf).unwrap_err().contains("may be leaves"));

        let cyclic = QueryPlan {
            nodes: vec![
                node(0, fetch(), Some(1), vec![]),
                node(1, Operator::MergeTopK { k: 1 }, None, vec![0, 2]),
                node(2, Operator::Sort { order: SortOrder::Paths }, None, vec![1]),
            ],
        };
        assert!(lint(&cyclic).unwrap_err().contains("cycle"));

        let persist_on_grid = {
            let mut p = QueryPlan {
                nodes: vec![
                    node(0, fetch(), Some(1), vec![]),
                    node(1, Operator::Persist { target: PersistTarget::View { name: "v".into() } }, None, vec![0]),
                ],
            };
            p.nodes[1].flavor = Flavor::Grid;
            p
        };
        assert!(lint(&persist_on_grid).is_err());
    }
}
