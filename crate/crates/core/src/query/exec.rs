//! Plan interpreter. Every operator consumes its inputs' batches and emits
//! one batch; tuple and byte counts per operator feed the cost model.

use std::collections::{BTreeMap, BTreeSet};

use super::connect::{connection_paths, ConnectionPath};
use super::plan::{Grouping, NlJoin, OpKind, Operator, PersistTarget, Projection, QueryPlan, ScanAccess, SortOrder};
use super::{
    AggregateFn, AggregateRow, ColumnPredicate, EntityCount, FacetCounts, FacetValue, Hit, QueryError, SearchResult,
    ViewResult, ViewResultRow, FACET_LIMIT,
};
use crate::discovery::{EntityKey, JoinIndex};
use crate::index::{Index, IndexKey};
use crate::model::{
    extract_paths, DocId, DocKind, DocNode, Lineage, Path, PathEntry, Reference, SourceFormat, TypedValue, VersionId,
};
use crate::ring::{NodeId, PartitionId};
use crate::schema::SynonymTable;
use crate::store::{DocDraft, KernelStore};
use crate::views::{project, ViewRegistry};

/// Read-only view of the engine a query executes against.
pub struct QueryContext<'a> {
    pub store: &'a KernelStore,
    pub index: &'a Index,
    pub joins: &'a JoinIndex,
    pub synonyms: &'a SynonymTable,
    pub views: &'a ViewRegistry,
    /// The data node that runs operators for each partition.
    pub placement: &'a BTreeMap<PartitionId, NodeId>,
    pub max_hops_cap: usize,
}

impl QueryContext<'_> {
    fn entries(&self, partition: PartitionId, doc: DocId, version: VersionId) -> Result<Vec<PathEntry>, QueryError> {
        let indexed = self.index.partition(partition).and_then(|p| p.indexed_version(doc));
        if indexed == Some(version) {
            if let Some(entries) = self.index.entries(partition, doc) {
                return Ok(entries.to_vec());
            }
        }
        Ok(extract_paths(&self.store.get(doc, Some(version))?.root))
    }

    fn latest(&self, doc: DocId) -> Option<VersionId> {
        self.store.latest(doc)
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Cand {
    doc: DocId,
    version: VersionId,
    partition: PartitionId,
    score: f64,
    /// Facet values (distinct, sorted) or `[group, measure]` lists.
    values: Vec<Vec<TypedValue>>,
    row: Vec<Option<TypedValue>>,
}

#[derive(Clone, Debug, PartialEq)]
struct JoinedRow {
    docs: Vec<(DocId, VersionId)>,
    values: Vec<Option<TypedValue>>,
}

#[derive(Clone, Debug, PartialEq)]
enum Batch {
    Docs(Vec<Cand>),
    Top { hits: Vec<Hit>, total: usize },
    Facets(Vec<FacetCounts>),
    Pairs(Vec<(DocId, EntityKey)>),
    Entities(Vec<EntityCount>),
    Groups(Vec<AggregateRow>),
    Rows(Vec<JoinedRow>),
    View(ViewResult, Vec<Vec<(DocId, VersionId)>>),
    Paths(Vec<ConnectionPath>),
    Persisted,
}

fn value_bytes(v: &TypedValue) -> usize {
    8 + v.text_form().len()
}

impl Batch {
    fn tuples(&self) -> usize {
        match self {
            Batch::Docs(d) => d.len(),
            Batch::Top { hits, .. } => hits.len(),
            Batch::Facets(f) => f.iter().map(|f| f.values.len()).sum(),
            Batch::Pairs(p) => p.len(),
            Batch::Entities(e) => e.len(),
            Batch::Groups(g) => g.len(),
            Batch::Rows(r) => r.len(),
            Batch::View(v, _) => v.rows.len(),
            Batch::Paths(p) => p.len(),
            Batch::Persisted => 1,
        }
    }

    /// Estimated wire size when shipped to another node.
    fn bytes(&self) -> usize {
        match self {
            Batch::Docs(d) => d
                .iter()
                .map(|c| {
                    24 + c.values.iter().flatten().map(value_bytes).sum::<usize>()
                        + c.row.iter().flatten().map(value_bytes).sum::<usize>()
                })
                .sum(),
            Batch::Top { hits, .. } => 8 + 24 * hits.len(),
            Batch::Facets(f) => f.iter().flat_map(|f| &f.values).map(|v| 8 + value_bytes(&v.value)).sum(),
            Batch::Pairs(p) => p.iter().map(|(_, k)| 16 + k.entity_type.len() + k.text.len()).sum(),
            Batch::Entities(e) => e.iter().map(|c| 8 + c.entity.entity_type.len() + c.entity.text.len()).sum(),
            Batch::Groups(g) => g.len() * 32,
            Batch::Rows(r) => r
                .iter()
                .map(|row| 16 * row.docs.len() + row.values.iter().flatten().map(value_bytes).sum::<usize>())
                .sum(),
            Batch::View(v, _) => v
                .rows
                .iter()
                .map(|r| 16 * r.docs.len() + r.values.iter().flatten().map(value_bytes).sum::<usize>())
                .sum(),
            Batch::Paths(p) => p.iter().map(|p| 24 * p.hops.len()).sum(),
            Batch::Persisted => 16,
        }
    }
}

/// Tuple counts of one executed plan node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OpStats {
    pub id: usize,
    pub tuples_in: usize,
    pub tuples_out: usize,
    pub bytes_out: usize,
}

/// How a materialized document can be recomputed from its lineage.
#[derive(Clone, Debug, PartialEq)]
pub enum Recipe {
    /// Hits rescored from the pinned inputs with the recorded term weights.
    SearchResult { name: String, weights: Vec<(String, f64)>, total: usize },
    /// Rows re-projected from the pinned inputs: each row reads one input
    /// per entry of `views`, concatenates their values and keeps `pick`.
    View { name: String, views: Vec<String>, columns: Vec<String>, pick: Vec<usize> },
}

#[derive(Clone, Debug, PartialEq)]
pub enum QueryOutput {
    Search(SearchResult),
    Aggregate(Vec<AggregateRow>),
    Connection(Vec<ConnectionPath>),
    View(ViewResult),
    Scan { documents: usize },
}

#[derive(Clone, Debug)]
pub struct Execution {
    pub output: QueryOutput,
    pub stats: Vec<OpStats>,
    /// A derived document the plan's Persist node commits, with its recipe.
    pub persist: Option<(DocDraft, Recipe)>,
}

/// Interprets `plan` against `ctx`.
pub fn execute(ctx: &QueryContext<'_>, plan: &QueryPlan) -> Result<Execution, QueryError> {
    let mut batches: Vec<Option<Batch>> = vec![None; plan.nodes.len()];
    let mut stats = Vec::with_capacity(plan.nodes.len());
    let mut persist = None;
    for node in &plan.nodes {
        let inputs: Vec<&Batch> =
            node.inputs.iter().map(|i| batches[*i].as_ref().expect("plans are topologically ordered")).collect();
        let tuples_in = inputs.iter().map(|b| b.tuples()).sum::<usize>();
        let (batch, read) = run(ctx, plan, &node.op, &inputs, &mut persist)?;
        stats.push(OpStats {
            id: node.id,
            tuples_in: tuples_in + read,
            tuples_out: batch.tuples(),
            bytes_out: batch.bytes(),
        });
        batches[node.id] = Some(batch);
    }
    let sinks: Vec<&Batch> = plan.sinks().into_iter().map(|i| batches[i].as_ref().expect("executed")).collect();
    let output = assemble(plan, &batches, &sinks);
    Ok(Execution { output, stats, persist })
}

fn assemble(plan: &QueryPlan, batches: &[Option<Batch>], sinks: &[&Batch]) -> QueryOutput {
    let of = |kind: OpKind| plan.nodes.iter().find(|n| n.op.kind() == kind).and_then(|n| batches[n.id].as_ref());
    if let Some(Batch::Top { hits, total }) = of(OpKind::MergeTopK) {
        let facet_counts = match of(OpKind::FacetCount) {
            Some(Batch::Facets(f)) => f.clone(),
            _ => Vec::new(),
        };
        let entity_counts = match of(OpKind::GroupAggregate) {
            Some(Batch::Entities(e)) => e.clone(),
            _ => Vec::new(),
        };
        return QueryOutput::Search(SearchResult { hits: hits.clone(), facet_counts, total: *total, entity_counts });
    }
    match of(OpKind::Sort) {
        Some(Batch::Groups(g)) => QueryOutput::Aggregate(g.clone()),
        Some(Batch::Paths(p)) => QueryOutput::Connection(p.clone()),
        Some(Batch::View(v, _)) => QueryOutput::View(v.clone()),
        _ => QueryOutput::Scan { documents: sinks.iter().map(|b| b.tuples()).sum() },
    }
}

fn docs_of<'b>(inputs: &[&'b Batch]) -> Vec<&'b Cand> {
    let mut out: Vec<&Cand> = inputs
        .iter()
        .filter_map(|b| match b {
            Batch::Docs(d) => Some(d.iter()),
            _ => None,
        })
        .flatten()
        .collect();
    out.sort_by_key(|c| c.doc);
    out
}

/// Returns the output batch and the number of tuples read from storage.
fn run(
    ctx: &QueryContext<'_>,
    plan: &QueryPlan,
    op: &Operator,
    inputs: &[&Batch],
    persist: &mut Option<(DocDraft, Recipe)>,
) -> Result<(Batch, usize), QueryError> {
    Ok(match op {
        Operator::IndexScan { access, partitions } => index_scan(ctx, access, partitions),
        Operator::Fetch { partitions, docs } => {
            let mut out = Vec::new();
            for &p in partitions {
                if docs.is_empty() {
                    for (doc, version) in ctx.store.latest_in_partition(p) {
                        out.push(cand(doc, version, p, 0.0));
                    }
                } else {
                    for &doc in docs {
                        let version = ctx.latest(doc).ok_or(QueryError::UnknownDoc(doc))?;
                        out.push(cand(doc, version, p, 0.0));
                    }
                }
            }
            let read = out.len();
            (Batch::Docs(out), read)
        }
        Operator::Filter { projection } => (Batch::Docs(filter(ctx, inputs, projection)?), 0),
        Operator::PartialTopK { k } | Operator::MergeTopK { k } => {
            let mut hits = Vec::new();
            let mut total = 0;
            for b in inputs {
                match b {
                    Batch::Docs(d) => {
                        total += d.len();
                        hits.extend(d.iter().map(|c| Hit { doc_id: c.doc, version: c.version, score: c.score }));
                    }
                    Batch::Top { hits: h, total: t } => {
                        total += t;
                        hits.extend(h.iter().cloned());
                    }
                    _ => {}
                }
            }
            rank(&mut hits);
            hits.truncate(*k);
            (Batch::Top { hits, total }, 0)
        }
        Operator::FacetCount { facets } => {
            let docs = docs_of(inputs);
            let counts = facets
                .iter()
                .enumerate()
                .map(|(i, (path, _))| {
                    let mut tally: BTreeMap<&TypedValue, usize> = BTreeMap::new();
                    for c in &docs {
                        for v in &c.values[i] {
                            *tally.entry(v).or_insert(0) += 1;
                        }
                    }
                    FacetCounts { path: path.clone(), values: top_values(tally) }
                })
                .collect();
            (Batch::Facets(counts), 0)
        }
        Operator::IndexedNLJoin { join } => nl_join(ctx, join, inputs)?,
        Operator::GroupAggregate { grouping } => match grouping {
            Grouping::Entities => {
                let mut tally: BTreeMap<EntityKey, BTreeSet<DocId>> = BTreeMap::new();
                for b in inputs {
                    if let Batch::Pairs(pairs) = b {
                        for (doc, key) in pairs {
                            tally.entry(key.clone()).or_default().insert(*doc);
                        }
                    }
                }
                let mut counts: Vec<EntityCount> =
                    tally.into_iter().map(|(entity, docs)| EntityCount { entity, count: docs.len() }).collect();
                counts.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.entity.cmp(&b.entity)));
                counts.truncate(FACET_LIMIT);
                (Batch::Entities(counts), 0)
            }
            Grouping::Aggregate { func, measure } => (Batch::Groups(aggregate(*func, measure, &docs_of(inputs))?), 0),
        },
        Operator::Sort { order } => (sort(order, inputs), 0),
        Operator::Persist { target } => {
            *persist = Some(materialize(plan, target, inputs));
            (Batch::Persisted, 0)
        }
    })
}

fn cand(doc: DocId, version: VersionId, partition: PartitionId, score: f64) -> Cand {
    Cand { doc, version, partition, score, values: Vec::new(), row: Vec::new() }
}

/// Score descending, then DocId ascending.
fn rank(hits: &mut [Hit]) {
    hits.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.doc_id.cmp(&b.doc_id)));
}

fn top_values(tally: BTreeMap<&TypedValue, usize>) -> Vec<FacetValue> {
    let mut values: Vec<FacetValue> =
        tally.into_iter().map(|(v, count)| FacetValue { value: v.clone(), count }).collect();
    values.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.value.cmp(&b.value)));
    values.truncate(FACET_LIMIT);
    values
}

fn index_scan(ctx: &QueryContext<'_>, access: &ScanAccess, partitions: &[PartitionId]) -> (Batch, usize) {
    let mut out = Vec::new();
    let mut read = 0;
    for &p in partitions {
        let Some(part) = ctx.index.partition(p) else { continue };
        match access {
            ScanAccess::Term { token, idf } => {
                let mut tf: BTreeMap<(DocId, VersionId), usize> = BTreeMap::new();
                for posting in part.lookup(&IndexKey::token(token.as_str())) {
                    read += 1;
                    *tf.entry((posting.doc_id, posting.version)).or_insert(0) += 1;
                }
                out.extend(tf.into_iter().map(|((doc, version), n)| cand(doc, version, p, n as f64 * idf)));
            }
            ScanAccess::Predicate { predicate, keys } => {
                let mut hits: BTreeSet<(DocId, VersionId)> = BTreeSet::new();
                for key in keys {
                    for posting in part.lookup(key) {
                        read += 1;
                        if posting.payload.as_ref().is_some_and(|v| predicate.accepts(v)) {
                            hits.insert((posting.doc_id, posting.version));
                        }
                    }
                }
                out.extend(hits.into_iter().map(|(doc, version)| cand(doc, version, p, 0.0)));
            }
        }
    }
    out.sort_by_key(|c| c.doc);
    (Batch::Docs(out), read)
}

fn distinct_values(entries: &[PathEntry], paths: &[Path]) -> Vec<TypedValue> {
    let mut values: Vec<TypedValue> =
        entries.iter().filter(|e| paths.contains(&e.path)).filter_map(|e| e.value.clone()).collect();
    values.sort();
    values.dedup();
    values
}

fn first_value(entries: &[PathEntry], paths: &[Path]) -> Option<TypedValue> {
    entries.iter().filter(|e| paths.contains(&e.path)).find_map(|e| e.value.clone())
}

fn filter(ctx: &QueryContext<'_>, inputs: &[&Batch], projection: &Projection) -> Result<Vec<Cand>, QueryError> {
    let lists: Vec<&Vec<Cand>> = inputs
        .iter()
        .filter_map(|b| match b {
            Batch::Docs(d) => Some(d),
            _ => None,
        })
        .collect();
    let Some((first, rest)) = lists.split_first() else { return Ok(Vec::new()) };
    let others: Vec<BTreeMap<DocId, &Cand>> = rest.iter().map(|l| l.iter().map(|c| (c.doc, c)).collect()).collect();
    let mut out = Vec::new();
    'docs: for c in first.iter() {
        let mut score = 0.0 + c.score;
        for other in &others {
            match other.get(&c.doc) {
                Some(o) if o.version == c.version => score += o.score,
                _ => continue 'docs,
            }
        }
        let mut kept = cand(c.doc, c.version, c.partition, score);
        match projection {
            Projection::None => {}
            Projection::Facets(facets) => {
                let entries = ctx.entries(c.partition, c.doc, c.version)?;
                kept.values = facets.iter().map(|paths| distinct_values(&entries, paths)).collect();
            }
            Projection::Aggregate { group_by, measure } => {
                let entries = ctx.entries(c.partition, c.doc, c.version)?;
                let Some(group) = first_value(&entries, group_by) else { continue };
                kept.values = vec![vec![group], first_value(&entries, measure).into_iter().collect()];
            }
            Projection::View { view, selection } => {
                let def = ctx.views.get(view)?;
                let Some(row) = project(ctx.store, def, ctx.synonyms, c.doc, c.version)? else { continue };
                if !passes(def, selection, &row.values, 0) {
                    continue;
                }
                kept.row = row.values;
            }
        }
        out.push(kept);
    }
    Ok(out)
}

/// Selection over a row whose columns for `view` start at `offset`.
fn passes(
    view: &crate::views::ViewDef,
    selection: &[ColumnPredicate],
    row: &[Option<TypedValue>],
    offset: usize,
) -> bool {
    selection.iter().all(|p| {
        let i = view.column_index(&p.column).expect("planner validated columns");
        p.accepts(row.get(offset + i).and_then(Option::as_ref))
    })
}

fn aggregate(func: AggregateFn, measure: &Path, docs: &[&Cand]) -> Result<Vec<AggregateRow>, QueryError> {
    let mut groups: BTreeMap<&TypedValue, Vec<(DocId, Option<&TypedValue>)>> = BTreeMap::new();
    for c in docs {
        groups.entry(&c.values[0][0]).or_default().push((c.doc, c.values[1].first()));
    }
    if func.needs_numbers() {
        let offending =
            docs.iter().filter(|c| c.values[1].first().is_some_and(|v| !v.is_numeric())).map(|c| c.doc).min();
        if let Some(doc) = offending {
            return Err(QueryError::NonNumericMeasure { doc, path: measure.clone() });
        }
    }
    let mut rows = Vec::new();
    for (group, members) in groups {
        let measures: Vec<&TypedValue> = members.iter().filter_map(|(_, m)| *m).collect();
        rows.push(AggregateRow { group: group.clone(), value: fold(func, &measures), inputs: measures.len() });
    }
    Ok(rows)
}

/// Applies an aggregate to measures given in DocId order.
pub fn fold(func: AggregateFn, measures: &[&TypedValue]) -> Option<TypedValue> {
    if func == AggregateFn::Count {
        return Some(TypedValue::Integer(measures.len() as i64));
    }
    if measures.is_empty() {
        return None;
    }
    let all_ints = measures.iter().all(|m| matches!(m, TypedValue::Integer(_)));
    match func {
        AggregateFn::Count => unreachable!(),
        AggregateFn::Min | AggregateFn::Max => {
            let mut best = measures[0];
            for m in &measures[1..] {
                let ord = m.compare(best).expect("numeric values compare");
                if (func == AggregateFn::Min && ord.is_lt()) || (func == AggregateFn::Max && ord.is_gt()) {
                    best = m;
                }
            }
            Some(best.clone())
        }
        AggregateFn::Sum if all_ints => {
            let sum: i128 = measures
                .iter()
                .map(|m| match m {
                    TypedValue::Integer(i) => i128::from(*i),
                    _ => unreachable!(),
                })
                .sum();
            Some(match i64::try_from(sum) {
                Ok(i) => TypedValue::Integer(i),
                Err(_) => TypedValue::decimal(sum as f64).expect("finite"),
            })
        }
        AggregateFn::Sum => TypedValue::decimal(float_sum(measures)),
        AggregateFn::Avg => {
            let mean = if all_ints {
                let sum: i128 = measures
                    .iter()
                    .map(|m| match m {
                        TypedValue::Integer(i) => i128::from(*i),
                        _ => unreachable!(),
                    })
                    .sum();
                sum as f64 / measures.len() as f64
            } else {
                float_sum(measures) / measures.len() as f64
            };
            TypedValue::decimal(mean)
        }
    }
}

fn float_sum(measures: &[&TypedValue]) -> f64 {
    measures.iter().map(|m| m.as_f64().expect("numeric")).fold(0.0, |a, b| a + b)
}

const TARGET_PATH: &str = "/annotation/target";
const TARGET_VERSION_PATH: &str = "/annotation/target_version";
const ENTITY_TYPE_PATH: &str = "/annotation/entity/type";
const ENTITY_TEXT_PATH: &str = "/annotation/entity/text";

/// Entity keys of an annotation document's listing, pairing type and text
/// by position.
fn entity_keys(entries: &[PathEntry]) -> Vec<EntityKey> {
    let type_path = Path::parse(ENTITY_TYPE_PATH).expect("valid path");
    let text_path = Path::parse(ENTITY_TEXT_PATH).expect("valid path");
    let mut types: BTreeMap<u32, String> = BTreeMap::new();
    let mut texts: BTreeMap<u32, String> = BTreeMap::new();
    for e in entries {
        if let Some(TypedValue::String(s)) = &e.value {
            if e.path == type_path {
                types.insert(e.position, s.clone());
            } else if e.path == text_path {
                texts.insert(e.position, s.clone());
            }
        }
    }
    types
        .into_iter()
        .filter_map(|(pos, entity_type)| texts.get(&pos).map(|text| EntityKey { entity_type, text: text.clone() }))
        .collect()
}

fn probe(ctx: &QueryContext<'_>, key: &IndexKey) -> Vec<(PartitionId, DocId, VersionId)> {
    let mut out: Vec<(PartitionId, DocId, VersionId)> = ctx
        .index
        .partitions()
        .flat_map(|(p, part)| part.lookup(key).map(move |q| (p, q.doc_id, q.version)))
        .filter(|(_, doc, v)| ctx.latest(*doc) == Some(*v))
        .collect();
    out.sort_by_key(|(_, d, v)| (*d, *v));
    out.dedup_by_key(|(_, d, v)| (*d, *v));
    out
}

fn nl_join(ctx: &QueryContext<'_>, join: &NlJoin, inputs: &[&Batch]) -> Result<(Batch, usize), QueryError> {
    let outer = docs_of(inputs);
    let mut probes = 0;
    match join {
        NlJoin::AnnotationTargets => {
            let target = Path::parse(TARGET_PATH).expect("valid path");
            let target_version = Path::parse(TARGET_VERSION_PATH).expect("valid path");
            let mut pairs: BTreeSet<(DocId, EntityKey)> = BTreeSet::new();
            for c in &outer {
                let key = IndexKey::path_value(target.clone(), TypedValue::string(c.doc.to_string()));
                for (p, annotation, version) in probe(ctx, &key) {
                    probes += 1;
                    let entries = ctx.entries(p, annotation, version)?;
                    let pinned = first_value(&entries, std::slice::from_ref(&target_version));
                    if pinned != Some(TypedValue::Integer(i64::from(c.version.number()))) {
                        continue;
                    }
                    for key in entity_keys(&entries) {
                        pairs.insert((c.doc, key));
                    }
                }
            }
            Ok((Batch::Pairs(pairs.into_iter().collect()), probes))
        }
        NlJoin::ViewColumns {
            left_view,
            right_view,
            outer_is_left,
            outer_column,
            inner_column,
            inner_paths,
            residual,
        } => {
            let left = ctx.views.get(left_view)?;
            let inner_def = if *outer_is_left { ctx.views.get(right_view)? } else { left };
            let mut rows = Vec::new();
            for c in &outer {
                let Some(value) = c.row[*outer_column].clone() else { continue };
                let mut inner_docs: Vec<(PartitionId, DocId, VersionId)> = Vec::new();
                for path in inner_paths {
                    inner_docs.extend(probe(ctx, &IndexKey::path_value(path.clone(), value.clone())));
                }
                inner_docs.sort_by_key(|(_, d, _)| *d);
                inner_docs.dedup_by_key(|(_, d, _)| *d);
                for (_, doc, version) in inner_docs {
                    probes += 1;
                    let Some(inner) = project(ctx.store, inner_def, ctx.synonyms, doc, version)? else { continue };
                    if inner.values[*inner_column].as_ref() != Some(&value) {
                        continue;
                    }
                    let (l, r) = if *outer_is_left {
                        (((c.doc, c.version), c.row.clone()), ((doc, version), inner.values))
                    } else {
                        (((doc, version), inner.values), ((c.doc, c.version), c.row.clone()))
                    };
                    if !passes(left, residual, &l.1, 0) {
                        continue;
                    }
                    let mut values = l.1;
                    values.extend(r.1);
                    rows.push(JoinedRow { docs: vec![l.0, r.0], values });
                }
            }
            Ok((Batch::Rows(rows), probes))
        }
        NlJoin::ViewJoinIndex { right_view, relation, .. } => {
            let right = ctx.views.get(right_view)?;
            let mut rows = Vec::new();
            for c in &outer {
                let mut partners: BTreeSet<DocId> = BTreeSet::new();
                for entry in ctx.joins.visible_for(c.doc, |d| ctx.latest(d)) {
                    probes += 1;
                    if &entry.relation == relation {
                        partners.insert(if entry.left.0 == c.doc { entry.right.0 } else { entry.left.0 });
                    }
                }
                for doc in partners {
                    let version = ctx.latest(doc).expect("visible entries are current");
                    let Some(inner) = project(ctx.store, right, ctx.synonyms, doc, version)? else { continue };
                    let mut values = c.row.clone();
                    values.extend(inner.values);
                    rows.push(JoinedRow { docs: vec![(c.doc, c.version), (doc, version)], values });
                }
            }
            Ok((Batch::Rows(rows), probes))
        }
        NlJoin::Connection { a, b, max_hops } => {
            let traversal = connection_paths(ctx.store, ctx.joins, *a, *b, *max_hops);
            Ok((Batch::Paths(traversal.paths), traversal.expansions))
        }
    }
}

fn sort(order: &SortOrder, inputs: &[&Batch]) -> Batch {
    match order {
        SortOrder::GroupValue => {
            let mut groups: Vec<AggregateRow> = inputs
                .iter()
                .filter_map(|b| match b {
                    Batch::Groups(g) => Some(g.iter().cloned()),
                    _ => None,
                })
                .flatten()
                .collect();
            groups.sort_by(|a, b| a.group.cmp(&b.group));
            Batch::Groups(groups)
        }
        SortOrder::Paths => {
            let mut paths: Vec<ConnectionPath> = inputs
                .iter()
                .filter_map(|b| match b {
                    Batch::Paths(p) => Some(p.iter().cloned()),
                    _ => None,
                })
                .flatten()
                .collect();
            paths.sort();
            Batch::Paths(paths)
        }
        SortOrder::ViewRows { columns, pick } => {
            let mut rows: Vec<JoinedRow> = Vec::new();
            for b in inputs {
                match b {
                    Batch::Docs(d) => rows
                        .extend(d.iter().map(|c| JoinedRow { docs: vec![(c.doc, c.version)], values: c.row.clone() })),
                    Batch::Rows(r) => rows.extend(r.iter().cloned()),
                    _ => {}
                }
            }
            rows.sort_by(|a, b| a.docs.cmp(&b.docs));
            let sources: Vec<Vec<(DocId, VersionId)>> = rows.iter().map(|r| r.docs.clone()).collect();
            let rows = rows
                .into_iter()
                .map(|r| ViewResultRow {
                    docs: r.docs.iter().map(|(d, _)| *d).collect(),
                    values: pick.iter().map(|i| r.values[*i].clone()).collect(),
                })
                .collect();
            Batch::View(ViewResult { columns: columns.clone(), rows }, sources)
        }
    }
}

fn materialize(plan: &QueryPlan, target: &PersistTarget, inputs: &[&Batch]) -> (DocDraft, Recipe) {
    match target {
        PersistTarget::SearchResult { name } => {
            let (hits, total) = inputs
                .iter()
                .find_map(|b| match b {
                    Batch::Top { hits, total } => Some((hits.clone(), *total)),
                    _ => None,
                })
                .unwrap_or_default();
            let weights = plan
                .nodes
                .iter()
                .filter_map(|n| match &n.op {
                    Operator::IndexScan { access: ScanAccess::Term { token, idf }, .. } => Some((token.clone(), *idf)),
                    _ => None,
                })
                .fold(Vec::new(), |mut acc: Vec<(String, f64)>, w| {
                    if !acc.iter().any(|(t, _)| *t == w.0) {
                        acc.push(w);
                    }
                    acc
                });
            let root = search_result_root(name, total, &hits);
            let inputs = hits.iter().map(|h| (h.doc_id, h.version)).collect();
            let recipe = Recipe::SearchResult { name: name.clone(), weights, total };
            (derived_draft(format!("search:{name}"), root, inputs), recipe)
        }
        PersistTarget::View { name } => {
            let (view, sources, pick) = inputs
                .iter()
                .find_map(|b| match b {
                    Batch::View(v, s) => Some((v.clone(), s.clone())),
                    _ => None,
                })
                .map(|(v, s)| (v, s, sort_pick(plan)))
                .unwrap_or_default();
            let root = view_root(name, &view);
            let inputs = sources.into_iter().flatten().collect();
            let recipe = Recipe::View { name: name.clone(), views: source_views(plan), columns: view.columns, pick };
            (derived_draft(format!("view:{name}"), root, inputs), recipe)
        }
    }
}

fn sort_pick(plan: &QueryPlan) -> Vec<usize> {
    plan.nodes
        .iter()
        .find_map(|n| match &n.op {
            Operator::Sort { order: SortOrder::ViewRows { pick, .. } } => Some(pick.clone()),
            _ => None,
        })
        .unwrap_or_default()
}

/// The views whose rows make up one output row, in row order.
fn source_views(plan: &QueryPlan) -> Vec<String> {
    for n in &plan.nodes {
        match &n.op {
            Operator::IndexedNLJoin { join: NlJoin::ViewColumns { left_view, right_view, .. } }
            | Operator::IndexedNLJoin { join: NlJoin::ViewJoinIndex { left_view, right_view, .. } } => {
                return vec![left_view.clone(), right_view.clone()]
            }
            _ => {}
        }
    }
    plan.nodes
        .iter()
        .find_map(|n| match &n.op {
            Operator::Filter { projection: Projection::View { view, .. } } => Some(vec![view.clone()]),
            _ => None,
        })
        .unwrap_or_default()
}

/// Recomputes the root of a materialized document from the versions its
/// lineage pins, without consulting indexes.
pub fn replay(
    store: &KernelStore,
    synonyms: &SynonymTable,
    views: &ViewRegistry,
    recipe: &Recipe,
    inputs: &[(DocId, VersionId)],
) -> Result<DocNode, QueryError> {
    match recipe {
        Recipe::SearchResult { name, weights, total } => {
            let mut hits = Vec::with_capacity(inputs.len());
            for &(doc, version) in inputs {
                let document = store.get(doc, Some(version))?;
                let postings = crate::index::postings_for(&document);
                let mut score = 0.0;
                for (token, idf) in weights {
                    let key = IndexKey::token(token.as_str());
                    let tf: BTreeSet<_> = postings.iter().filter(|(k, _)| *k == key).map(|(_, p)| p).collect();
                    score += tf.len() as f64 * idf;
                }
                hits.push(Hit { doc_id: doc, version, score });
            }
            Ok(search_result_root(name, *total, &hits))
        }
        Recipe::View { name, views: sources, columns, pick } => {
            let mut rows = Vec::new();
            if !sources.is_empty() {
                for chunk in inputs.chunks(sources.len()) {
                    let mut values = Vec::new();
                    for (view, &(doc, version)) in sources.iter().zip(chunk) {
                        let def = views.get(view)?;
                        match project(store, def, synonyms, doc, version)? {
                            Some(row) => values.extend(row.values),
                            None => values.extend(std::iter::repeat_n(None, def.columns.len())),
                        }
                    }
                    rows.push(ViewResultRow {
                        docs: chunk.iter().map(|(d, _)| *d).collect(),
                        values: pick.iter().map(|i| values.get(*i).cloned().flatten()).collect(),
                    });
                }
            }
            Ok(view_root(name, &ViewResult { columns: columns.clone(), rows }))
        }
    }
}

pub(crate) fn search_result_root(name: &str, total: usize, hits: &[Hit]) -> DocNode {
    let mut root = DocNode::new("search_result")
        .with_child(DocNode::leaf("name", TypedValue::string(name)))
        .with_child(DocNode::leaf("total", TypedValue::Integer(total as i64)));
    for h in hits {
        root = root.with_child(
            DocNode::new("hit")
                .with_child(DocNode::leaf("doc", TypedValue::string(h.doc_id.to_string())))
                .with_child(DocNode::leaf("version", TypedValue::Integer(i64::from(h.version.number()))))
                .with_child(DocNode::leaf("score", TypedValue::decimal(h.score).unwrap_or(TypedValue::Integer(0)))),
        );
    }
    root
}

pub(crate) fn view_root(name: &str, view: &ViewResult) -> DocNode {
    let mut root = DocNode::new("view").with_child(DocNode::leaf("name", TypedValue::string(name)));
    for row in &view.rows {
        let mut node = DocNode::new("row");
        for (column, value) in view.columns.iter().zip(&row.values) {
            if let Some(v) = value {
                node = node.with_child(DocNode::leaf(column.as_str(), v.clone()));
            }
        }
        root = root.with_child(node);
    }
    root
}

fn derived_draft(producer: String, root: DocNode, inputs: Vec<(DocId, VersionId)>) -> DocDraft {
    let mut seen = BTreeSet::new();
    let references = inputs
        .iter()
        .filter(|i| seen.insert(**i))
        .map(|(doc, version)| Reference { target_doc: *doc, target_version: *version, relation: "derived_from".into() })
        .collect();
    DocDraft {
        kind: DocKind::Derived,
        source_format: SourceFormat::JsonLike,
        root,
        references,
        lineage: Some(Lineage { producer, inputs }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn int(i: i64) -> TypedValue {
        TypedValue::Integer(i)
    }

    fn dec(f: f64) -> TypedValue {
        TypedValue::decimal(f).unwrap()
    }

    fn entry(path: &str, value: Option<TypedValue>, position: u32) -> PathEntry {
        PathEntry { path: Path::parse(path).unwrap(), value, position }
    }

    #[test]
    fn count_is_defined_on_empty_input() {
        assert_eq!(fold(AggregateFn::Count, &[]), Some(int(0)));
        assert_eq!(fold(AggregateFn::Sum, &[]), None);
        assert_eq!(fold(AggregateFn::Avg, &[]), None);
    }

    #[test]
    fn integer_sums_stay_integers_until_they_overflow() {
        let (a, b) = (int(3), int(-5));
        assert_eq!(fold(AggregateFn::Sum, &[&a, &b]), Some(int(-2)));
        let big = int(i64::MAX);
        assert_eq!(fold(AggregateFn::Sum, &[&big, &big]), Some(dec(2.0 * i64::MAX as f64)));
    }

    #[test]
    fn mixed_measures_fold_as_decimals() {
        let (a, b) = (int(1), dec(2.5));
        assert_eq!(fold(AggregateFn::Sum, &[&a, &b]), Some(dec(3.5)));
        assert_eq!(fold(AggregateFn::Avg, &[&a, &b]), Some(dec(1.75)));
        assert_eq!(fold(AggregateFn::Max, &[&a, &b]), Some(dec(2.5)));
        assert_eq!(fold(AggregateFn::Min, &[&a, &b]), Some(int(1)));
    }

    #[test]
    fn min_keeps_the_first_of_equal_values() {
        let (a, b) = (int(2), dec(2.0));
        assert_eq!(fold(AggregateFn::Min, &[&a, &b]), Some(int(2)));
        assert_eq!(fold(AggregateFn::Max, &[&b, &a]), Some(dec(2.0)));
    }

    #[test]
    fn facet_values_sort_by_count_then_value() {
        let (x, y, z) = (TypedValue::string("x"), TypedValue::string("y"), TypedValue::string("z"));
        let tally = BTreeMap::from([(&z, 2), (&y, 5), (&x, 2)]);
        let got: Vec<(TypedValue, usize)> = top_values(tally).into_iter().map(|v| (v.value, v.count)).collect();
        assert_eq!(got, vec![(y.clone(), 5), (x.clone(), 2), (z.clone(), 2)]);
    }

    #[test]
    fn facet_values_are_capped() {
        let values: Vec<TypedValue> = (0..FACET_LIMIT as i64 + 5).map(int).collect();
        let tally: BTreeMap<&TypedValue, usize> = values.iter().map(|v| (v, 1)).collect();
        assert_eq!(top_values(tally).len(), FACET_LIMIT);
    }

    #[test]
    fn equal_scores_rank_by_doc_id() {
        let v = VersionId::FIRST;
        let mut hits = vec![
            Hit { doc_id: DocId::new(1, 3), version: v, score: 1.0 },
            Hit { doc_id: DocId::new(1, 1), version: v, score: 1.0 },
            Hit { doc_id: DocId::new(1, 2), version: v, score: 2.0 },
        ];
        rank(&mut hits);
        let order: Vec<u64> = hits.iter().map(|h| h.doc_id.sequence).collect();
        assert_eq!(order, vec![2, 1, 3]);
    }

    #[test]
    fn value_lookups_honor_every_listed_path() {
        let entries = vec![
            entry("/a/x", Some(int(2)), 0),
            entry("/a/y", Some(int(1)), 0),
            entry("/a/x", Some(int(2)), 1),
            entry("/a/x", None, 2),
        ];
        let paths = [Path::parse("/a/y").unwrap(), Path::parse("/a/x").unwrap()];
        assert_eq!(distinct_values(&entries, &paths), vec![int(1), int(2)]);
        assert_eq!(first_value(&entries, &paths), Some(int(2)));
        assert_eq!(first_value(&entries, &paths[..1]), Some(int(1)));
    }

    #[test]
    fn entity_keys_pair_type_and_text_by_position() {
        let s = |t: &str| Some(TypedValue::string(t));
        let entries = vec![
            entry(ENTITY_TYPE_PATH, s("company"), 0),
            entry(ENTITY_TYPE_PATH, s("email"), 1),
            entry(ENTITY_TEXT_PATH, s("globex"), 0),
            entry(ENTITY_TEXT_PATH, s("a@b.io"), 1),
            entry(ENTITY_TYPE_PATH, s("code"), 2),
        ];
        let keys: Vec<String> = entity_keys(&entries).iter().map(ToString::to_string).collect();
        assert_eq!(keys, vec!["company:globex", "email:a@b.io"]);
    }
}
