//! Guided search, drill-down, aggregation, connection and view queries.
//!
//! Requests are compiled by [`plan`] into a [`QueryPlan`] over a fixed
//! operator set; [`exec::execute`] interprets the plan against one snapshot
//! of the store and indexes and reports per-operator tuple counts for the
//! simulator to charge.

mod connect;
pub mod exec;
pub mod plan;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::discovery::EntityKey;
use crate::model::{DocId, Path, TypedValue, VersionId};
use crate::schema::{Comparator, StructuralPredicate};
use crate::store::StoreError;
use crate::views::ViewError;

pub use connect::{connection_paths, ConnectionPath, Hop};
pub use exec::{execute, replay, Execution, OpStats, QueryContext, QueryOutput, Recipe};
pub use plan::{lint, plan, Flavor, OpKind, Operator, PlanNode, QueryPlan};

fn default_k() -> usize {
    10
}

/// `path = value`, applied as a drill-down.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Constraint {
    pub path: Path,
    pub value: TypedValue,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchRequest {
    /// Every token of every term must occur in a matching document.
    #[serde(default)]
    pub terms: Vec<String>,
    #[serde(default)]
    pub structural: Vec<StructuralPredicate>,
    #[serde(default)]
    pub constraints: Vec<Constraint>,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub facets: Vec<Path>,
    /// Also count annotation entities over the match set.
    #[serde(default)]
    pub entity_facets: bool,
    /// Persist the hits and counts as a derived document with this name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub materialize: Option<String>,
}

impl Default for SearchRequest {
    fn default() -> Self {
        SearchRequest {
            terms: Vec::new(),
            structural: Vec::new(),
            constraints: Vec::new(),
            k: default_k(),
            facets: Vec::new(),
            entity_facets: false,
            materialize: None,
        }
    }
}

impl SearchRequest {
    pub fn terms(terms: &[&str]) -> Self {
        SearchRequest { terms: terms.iter().map(|t| t.to_string()).collect(), ..SearchRequest::default() }
    }

    pub fn validate(&self) -> Result<(), QueryError> {
        if self.k == 0 {
            return Err(QueryError::Invalid("k must be at least 1".into()));
        }
        if let Some(name) = &self.materialize {
            if name.is_empty() {
                return Err(QueryError::Invalid("materialize needs a non-empty name".into()));
            }
        }
        Ok(())
    }

    /// Query tokens in first-occurrence order.
    pub fn tokens(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for term in &self.terms {
            for token in crate::index::tokenize(term) {
                if !out.contains(&token) {
                    out.push(token);
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub doc_id: DocId,
    pub version: VersionId,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FacetValue {
    pub value: TypedValue,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FacetCounts {
    pub path: Path,
    pub values: Vec<FacetValue>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityCount {
    pub entity: EntityKey,
    pub count: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub hits: Vec<Hit>,
    pub facet_counts: Vec<FacetCounts>,
    pub total: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub entity_counts: Vec<EntityCount>,
}

/// Maximum number of values reported per facet.
pub const FACET_LIMIT: usize = 20;

/// A base request plus the drill-down constraints applied to it, in order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DrillState {
    pub base: SearchRequest,
    #[serde(default)]
    pub applied: Vec<Constraint>,
}

impl DrillState {
    pub fn new(base: SearchRequest) -> Self {
        DrillState { base, applied: Vec::new() }
    }

    /// The request whose result this state denotes.
    pub fn effective(&self) -> SearchRequest {
        let mut req = self.base.clone();
        req.constraints.extend(self.applied.iter().cloned());
        req
    }

    /// Adds `facet = value`, replacing an earlier value for the same facet.
    pub fn drill_down(&self, facet: Path, value: TypedValue) -> Result<DrillState, QueryError> {
        if !self.base.facets.contains(&facet) {
            return Err(QueryError::FacetNotRequested(facet));
        }
        let mut next = self.clone();
        match next.applied.iter_mut().find(|c| c.path == facet) {
            Some(existing) => existing.value = value,
            None => next.applied.push(Constraint { path: facet, value }),
        }
        Ok(next)
    }

    /// Switches the facet list and keeps every applied constraint.
    pub fn drill_across(&self, facets: Vec<Path>) -> DrillState {
        let mut next = self.clone();
        next.base.facets = facets;
        next
    }

    /// Removes the constraint at `index` of the breadcrumb trail.
    pub fn undo(&self, index: usize) -> Result<DrillState, QueryError> {
        if index >= self.applied.len() {
            return Err(QueryError::Invalid(format!("no applied constraint at position {index}")));
        }
        let mut next = self.clone();
        next.applied.remove(index);
        Ok(next)
    }

    /// Canonical text: equal states serialize to identical bytes.
    pub fn to_canonical(&self) -> String {
        serde_json::to_string(self).expect("drill state serializes")
    }

    pub fn from_canonical(text: &str) -> Result<DrillState, QueryError> {
        serde_json::from_str(text).map_err(|e| QueryError::Invalid(format!("drill state: {e}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregateFn {
    Count,
    Sum,
    Min,
    Max,
    Avg,
}

impl AggregateFn {
    pub fn needs_numbers(self) -> bool {
        self != AggregateFn::Count
    }
}

impl std::str::FromStr for AggregateFn {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "count" => AggregateFn::Count,
            "sum" => AggregateFn::Sum,
            "min" => AggregateFn::Min,
            "max" => AggregateFn::Max,
            "avg" => AggregateFn::Avg,
            other => return Err(format!("unknown aggregate function {other:?}")),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregateRequest {
    pub state: DrillState,
    pub group_by: Path,
    pub measure: Path,
    #[serde(rename = "fn")]
    pub func: AggregateFn,
}

/// One output group. `value` is `None` when no document of the group has
/// the measure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub group: TypedValue,
    pub value: Option<TypedValue>,
    pub inputs: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConnectionRequest {
    pub a: DocId,
    pub b: DocId,
    pub max_hops: usize,
}

/// `column <op> value` over a view row; nulls never match.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnPredicate {
    pub column: String,
    pub op: Comparator,
    pub value: TypedValue,
}

impl ColumnPredicate {
    pub fn accepts(&self, value: Option<&TypedValue>) -> bool {
        value.and_then(|v| v.compare(&self.value)).is_some_and(|o| self.op.holds(o))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum JoinSpec {
    /// Equality of a left and a right column, probed through the
    /// path-value index.
    OnColumns { left: String, right: String },
    /// Pairs recorded in the join index under `relation`.
    OnJoinIndex { relation: String },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewJoin {
    pub view: String,
    pub on: JoinSpec,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewQuery {
    pub view: String,
    #[serde(default)]
    pub selection: Vec<ColumnPredicate>,
    /// Output columns; empty means all. With a join, names are
    /// qualified as `view.column`.
    #[serde(default)]
    pub projection: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub join: Option<ViewJoin>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub materialize: Option<String>,
}

impl ViewQuery {
    pub fn all(view: &str) -> Self {
        ViewQuery { view: view.to_string(), selection: vec![], projection: vec![], join: None, materialize: None }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewResultRow {
    pub docs: Vec<DocId>,
    pub values: Vec<Option<TypedValue>>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewResult {
    pub columns: Vec<String>,
    pub rows: Vec<ViewResultRow>,
}

/// Anything the planner accepts.
#[derive(Clone, Debug, PartialEq)]
pub enum Request {
    Search(SearchRequest),
    Aggregate(AggregateRequest),
    Connection(ConnectionRequest),
    View(ViewQuery),
    /// Full scan of every partition; the plan holds scans only.
    Scan,
}

impl fmt::Display for Request {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Request::Search(_) => f.write_str("search"),
            Request::Aggregate(_) => f.write_str("aggregate"),
            Request::Connection(_) => f.write_str("connect"),
            Request::View(_) => f.write_str("view"),
            Request::Scan => f.write_str("scan"),
        }
    }
}

#[derive(Debug, Error)]
pub enum QueryError {
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error("facet {0} was not requested")]
    FacetNotRequested(Path),
    #[error("unregistered view {0:?}")]
    UnknownView(String),
    #[error("unknown view column {view}.{column}")]
    UnknownColumn { view: String, column: String },
    #[error("no index supports joining on {view}.{column}")]
    NoIndex { view: String, column: String },
    #[error("unknown document {0}")]
    UnknownDoc(DocId),
    #[error("connection endpoints must differ")]
    SameEndpoints,
    #[error("max_hops {max_hops} exceeds the cap of {cap}")]
    TooManyHops { max_hops: usize, cap: usize },
    #[error("measure {path} of document {doc} is not numeric")]
    NonNumericMeasure { doc: DocId, path: Path },
    #[error("plan rejected: {0}")]
    Lint(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    View(#[from] ViewError),
}
