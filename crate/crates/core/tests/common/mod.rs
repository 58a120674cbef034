//! Brute-force reference implementations used by the integration tests.
//!
//! Nothing here calls into the engine's query, index or discovery code. The
//! oracles read document trees straight out of the store and evaluate
//! requests by walking every document.

#![allow(dead_code)]

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use impliance::appliance::Appliance;
use impliance::config::ApplianceConfig;
use impliance::model::{DocId, DocKind, DocNode, Path, TypedValue, VersionId};
use impliance::query::{AggregateFn, AggregateRow, SearchRequest, SearchResult};
use impliance::schema::Comparator;
use impliance::workload::COMPANIES;

pub fn small_config() -> ApplianceConfig {
    let mut c = ApplianceConfig::default();
    c.cluster.data_nodes = 4;
    c.cluster.grid_nodes = 2;
    c.cluster.cluster_nodes = 3;
    c
}

pub fn path(s: &str) -> Path {
    Path::parse(s).expect("test paths are valid")
}

/// A valued node with its absolute label path.
#[derive(Clone, Debug)]
pub struct Leaf {
    pub path: String,
    pub value: TypedValue,
}

/// Valued nodes in document order, parents before children.
pub fn leaves(root: &DocNode) -> Vec<Leaf> {
    fn walk(node: &DocNode, prefix: &str, out: &mut Vec<Leaf>) {
        let here = format!("{prefix}/{}", node.label);
        if let Some(v) = &node.value {
            out.push(Leaf { path: here.clone(), value: v.clone() });
        }
        for c in &node.children {
            walk(c, &here, out);
        }
    }
    let mut out = Vec::new();
    walk(root, "", &mut out);
    out
}

pub fn words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            cur.extend(ch.to_lowercase());
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn number(v: &TypedValue) -> Option<f64> {
    match v {
        TypedValue::Integer(i) => Some(*i as f64),
        TypedValue::Decimal(d) => Some(d.get()),
        _ => None,
    }
}

/// Numbers compare with numbers; anything else only with its own type.
pub fn compare(a: &TypedValue, b: &TypedValue) -> Option<Ordering> {
    match (a, b) {
        (TypedValue::Integer(x), TypedValue::Integer(y)) => Some(x.cmp(y)),
        (TypedValue::String(x), TypedValue::String(y)) => Some(x.cmp(y)),
        (TypedValue::Boolean(x), TypedValue::Boolean(y)) => Some(x.cmp(y)),
        (TypedValue::Timestamp(x), TypedValue::Timestamp(y)) => Some(x.cmp(y)),
        _ => number(a)?.partial_cmp(&number(b)?),
    }
}

pub fn holds(op: Comparator, ord: Ordering) -> bool {
    match op {
        Comparator::Eq => ord == Ordering::Equal,
        Comparator::Lt => ord == Ordering::Less,
        Comparator::Le => ord != Ordering::Greater,
        Comparator::Gt => ord == Ordering::Greater,
        Comparator::Ge => ord != Ordering::Less,
    }
}

#[derive(Clone, Debug)]
pub struct OracleDoc {
    pub id: DocId,
    pub version: VersionId,
    pub kind: DocKind,
    pub root: DocNode,
    pub leaves: Vec<Leaf>,
}

impl OracleDoc {
    pub fn values_at<'a>(&'a self, paths: &'a [String]) -> impl Iterator<Item = &'a TypedValue> + 'a {
        self.leaves.iter().filter(|l| paths.contains(&l.path)).map(|l| &l.value)
    }
}

/// Latest version of every document, by DocId.
pub fn snapshot(app: &Appliance) -> Vec<OracleDoc> {
    let store = app.store();
    let mut docs: Vec<OracleDoc> = store
        .latest_documents()
        .map(|(id, meta)| {
            let doc = store.get(id, Some(meta.version)).expect("latest versions are readable");
            OracleDoc { id, version: meta.version, kind: doc.kind, leaves: leaves(&doc.root), root: doc.root }
        })
        .collect();
    docs.sort_by_key(|d| d.id);
    docs
}

/// Synonym classes as plain strings.
pub struct Synonyms(pub Vec<Vec<String>>);

impl Synonyms {
    pub fn of(config: &ApplianceConfig) -> Synonyms {
        Synonyms(config.synonyms.iter().map(|c| c.iter().map(|p| p.as_str().to_string()).collect()).collect())
    }

    pub fn expand(&self, p: &Path) -> Vec<String> {
        let p = p.as_str().to_string();
        self.0.iter().find(|c| c.contains(&p)).cloned().unwrap_or_else(|| vec![p])
    }
}

/// Entity keys held by each base document, read from its annotation docs.
pub fn stored_entities(docs: &[OracleDoc]) -> BTreeMap<DocId, BTreeSet<(String, String)>> {
    let current: BTreeMap<DocId, VersionId> = docs.iter().map(|d| (d.id, d.version)).collect();
    let mut out: BTreeMap<DocId, BTreeSet<(String, String)>> = BTreeMap::new();
    for a in docs.iter().filter(|d| d.kind == DocKind::Annotation) {
        let field = |node: &DocNode, name: &str| node.children.iter().find(|c| c.label == name)?.value.clone();
        let (Some(TypedValue::String(target)), Some(TypedValue::Integer(v))) =
            (field(&a.root, "target"), field(&a.root, "target_version"))
        else {
            continue;
        };
        let Ok(target) = DocId::try_from(target) else { continue };
        if current.get(&target).map(|v| i64::from(v.number())) != Some(v) {
            continue;
        }
        for e in a.root.children.iter().filter(|c| c.label == "entity") {
            if let (Some(TypedValue::String(t)), Some(TypedValue::String(x))) = (field(e, "type"), field(e, "text")) {
                out.entry(target).or_default().insert((t, x));
            }
        }
    }
    out
}

#[derive(Clone, Debug, Default)]
pub struct OracleSearch {
    pub hits: Vec<(DocId, VersionId, f64)>,
    pub total: usize,
    pub facets: Vec<(String, Vec<(TypedValue, usize)>)>,
    pub entities: Vec<((String, String), usize)>,
}

pub const FACET_LIMIT: usize = 20;

fn request_tokens(req: &SearchRequest) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for t in req.terms.iter().flat_map(|t| words(t)) {
        if !out.contains(&t) {
            out.push(t);
        }
    }
    out
}

/// Term frequency: valued nodes whose text contains the token.
fn tf(doc: &OracleDoc, token: &str) -> usize {
    doc.leaves.iter().filter(|l| words(&l.value.text_form()).iter().any(|w| w == token)).count()
}

/// Documents satisfying every term and predicate of the request.
pub fn matches<'a>(docs: &'a [OracleDoc], syn: &Synonyms, req: &SearchRequest) -> Vec<(&'a OracleDoc, f64)> {
    let tokens = request_tokens(req);
    let n = docs.len() as f64;
    let idf: Vec<f64> = tokens
        .iter()
        .map(|t| {
            let df = docs.iter().filter(|d| tf(d, t) > 0).count();
            if df == 0 {
                0.0
            } else {
                (1.0 + n / df as f64).ln()
            }
        })
        .collect();
    let mut preds: Vec<(Vec<String>, Comparator, TypedValue)> =
        req.structural.iter().map(|p| (syn.expand(&p.path), p.op, p.value.clone())).collect();
    preds.extend(req.constraints.iter().map(|c| (syn.expand(&c.path), Comparator::Eq, c.value.clone())));
    let mut out = Vec::new();
    'docs: for d in docs {
        let mut score = 0.0;
        for (t, w) in tokens.iter().zip(&idf) {
            let f = tf(d, t);
            if f == 0 {
                continue 'docs;
            }
            score += f as f64 * w;
        }
        for (paths, op, value) in &preds {
            if !d.values_at(paths).any(|v| compare(v, value).is_some_and(|o| holds(*op, o))) {
                continue 'docs;
            }
        }
        out.push((d, score));
    }
    out
}

fn tally<K: Ord + Clone>(counts: BTreeMap<K, usize>) -> Vec<(K, usize)> {
    let mut v: Vec<(K, usize)> = counts.into_iter().collect();
    v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    v.truncate(FACET_LIMIT);
    v
}

pub fn search(docs: &[OracleDoc], syn: &Synonyms, req: &SearchRequest) -> OracleSearch {
    let matched = matches(docs, syn, req);
    let mut hits: Vec<(DocId, VersionId, f64)> = matched.iter().map(|(d, s)| (d.id, d.version, *s)).collect();
    hits.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)));
    hits.truncate(req.k);
    let facets = req
        .facets
        .iter()
        .map(|f| {
            let paths = syn.expand(f);
            let mut counts: BTreeMap<TypedValue, usize> = BTreeMap::new();
            for (d, _) in &matched {
                let distinct: BTreeSet<&TypedValue> = d.values_at(&paths).collect();
                for v in distinct {
                    *counts.entry(v.clone()).or_default() += 1;
                }
            }
            (f.as_str().to_string(), tally(counts))
        })
        .collect();
    let entities = if req.entity_facets {
        let held = stored_entities(docs);
        let mut counts: BTreeMap<(String, String), usize> = BTreeMap::new();
        for (d, _) in &matched {
            for key in held.get(&d.id).into_iter().flatten() {
                *counts.entry(key.clone()).or_default() += 1;
            }
        }
        tally(counts)
    } else {
        Vec::new()
    };
    OracleSearch { hits, total: matched.len(), facets, entities }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Folded {
    Int(i128),
    Num(f64),
    Value(TypedValue),
    Null,
}

#[derive(Clone, Debug)]
pub struct OracleGroup {
    pub group: TypedValue,
    pub value: Folded,
    pub inputs: usize,
}

/// Grouped aggregate over the matched documents, or the lowest DocId with a
/// non-numeric measure when the function needs numbers.
pub fn aggregate(
    docs: &[OracleDoc],
    syn: &Synonyms,
    req: &SearchRequest,
    group_by: &Path,
    measure: &Path,
    func: AggregateFn,
) -> Result<Vec<OracleGroup>, DocId> {
    let gpaths = syn.expand(group_by);
    let mpaths = syn.expand(measure);
    let mut groups: BTreeMap<TypedValue, Vec<TypedValue>> = BTreeMap::new();
    let mut bad: Option<DocId> = None;
    let mut matched: Vec<&OracleDoc> = matches(docs, syn, req).into_iter().map(|(d, _)| d).collect();
    matched.sort_by_key(|d| d.id);
    for d in matched {
        let Some(g) = d.values_at(&gpaths).next() else { continue };
        let m = d.values_at(&mpaths).next().cloned();
        if let Some(m) = &m {
            if func != AggregateFn::Count && number(m).is_none() && bad.is_none() {
                bad = Some(d.id);
            }
        }
        groups.entry(g.clone()).or_default().extend(m);
    }
    if let Some(doc) = bad {
        return Err(doc);
    }
    Ok(groups
        .into_iter()
        .map(|(group, ms)| {
            let ints: Option<Vec<i64>> = ms
                .iter()
                .map(|m| match m {
                    TypedValue::Integer(i) => Some(*i),
                    _ => None,
                })
                .collect();
            let value = match func {
                AggregateFn::Count => Folded::Int(ms.len() as i128),
                _ if ms.is_empty() => Folded::Null,
                AggregateFn::Sum => match &ints {
                    Some(v) => Folded::Int(v.iter().map(|i| i128::from(*i)).sum()),
                    None => Folded::Num(ms.iter().filter_map(number).sum()),
                },
                AggregateFn::Avg => {
                    let total: f64 = match &ints {
                        Some(v) => v.iter().map(|i| i128::from(*i)).sum::<i128>() as f64,
                        None => ms.iter().filter_map(number).sum(),
                    };
                    Folded::Num(total / ms.len() as f64)
                }
                AggregateFn::Min | AggregateFn::Max => {
                    let pick = ms
                        .iter()
                        .map(|m| number(m).expect("checked numeric"))
                        .fold(None, |acc: Option<f64>, x| match acc {
                            None => Some(x),
                            Some(a) if func == AggregateFn::Min => Some(a.min(x)),
                            Some(a) => Some(a.max(x)),
                        })
                        .expect("non-empty");
                    Folded::Num(pick)
                }
            };
            OracleGroup { group, value, inputs: ms.len() }
        })
        .collect())
}

pub fn close(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= 1e-9 * a.abs().max(b.abs())
}

/// Entity keys the default annotators should find in a base document.
pub fn predict_entities(doc: &OracleDoc) -> BTreeSet<(String, String)> {
    let mut out = BTreeSet::new();
    for leaf in &doc.leaves {
        let text = leaf.value.text_form();
        let lower = text.to_lowercase();
        for company in COMPANIES {
            let c = company.to_lowercase();
            let mut from = 0;
            while let Some(i) = lower[from..].find(&c) {
                let start = from + i;
                let end = start + c.len();
                let before = lower[..start].chars().next_back().is_none_or(|ch| !ch.is_alphanumeric() && ch != '_');
                let after = lower[end..].chars().next().is_none_or(|ch| !ch.is_alphanumeric() && ch != '_');
                if before && after {
                    out.insert(("company".to_string(), c.clone()));
                }
                from = end;
            }
        }
        for w in text.split_whitespace() {
            if let Some((user, host)) = w.split_once('@') {
                if !user.is_empty() && host.contains('.') {
                    out.insert(("email".to_string(), w.to_lowercase()));
                }
            }
            if let Some(digits) = w.strip_prefix("AB-") {
                if (3..=6).contains(&digits.len()) && digits.chars().all(|c| c.is_ascii_digit()) {
                    out.insert(("code".to_string(), w.to_lowercase()));
                }
            }
        }
    }
    out
}

/// Undirected labelled graph for connection oracles.
#[derive(Default)]
pub struct Graph {
    pub edges: BTreeMap<DocId, BTreeSet<(DocId, String)>>,
}

impl Graph {
    pub fn link(&mut self, a: DocId, b: DocId, relation: &str) {
        self.edges.entry(a).or_default().insert((b, relation.to_string()));
        self.edges.entry(b).or_default().insert((a, relation.to_string()));
    }

    /// Every simple path of minimal length, sorted, at most `limit` of them.
    pub fn shortest_paths(&self, a: DocId, b: DocId, max_hops: usize, limit: usize) -> Vec<Vec<(DocId, String)>> {
        let mut found: Vec<Vec<(DocId, String)>> = Vec::new();
        for hops in 1..=max_hops {
            let mut stack = Vec::new();
            self.walk(a, b, hops, &mut vec![a], &mut stack, &mut found);
            if !found.is_empty() {
                break;
            }
        }
        found.sort();
        found.truncate(limit);
        found
    }

    fn walk(
        &self,
        at: DocId,
        b: DocId,
        left: usize,
        seen: &mut Vec<DocId>,
        stack: &mut Vec<(DocId, String)>,
        found: &mut Vec<Vec<(DocId, String)>>,
    ) {
        if left == 0 {
            if at == b {
                found.push(stack.clone());
            }
            return;
        }
        for (next, rel) in self.edges.get(&at).into_iter().flatten() {
            if seen.contains(next) {
                continue;
            }
            seen.push(*next);
            stack.push((*next, rel.clone()));
            self.walk(*next, b, left - 1, seen, stack, found);
            stack.pop();
            seen.pop();
        }
    }
}

fn check(ok: bool, why: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(why())
    }
}

/// Engine search output against the oracle's, scores to [`close`].
pub fn compare_search(got: &SearchResult, want: &OracleSearch) -> Result<(), String> {
    check(got.total == want.total, || format!("total {} expected {}", got.total, want.total))?;
    let mut a: Vec<(DocId, VersionId, f64)> = got.hits.iter().map(|h| (h.doc_id, h.version, h.score)).collect();
    let mut b = want.hits.clone();
    a.sort_by_key(|h| h.0);
    b.sort_by_key(|h| h.0);
    let same = a.len() == b.len() && a.iter().zip(&b).all(|(x, y)| x.0 == y.0 && x.1 == y.1 && close(x.2, y.2));
    check(same, || format!("hits {a:?} expected {b:?}"))?;
    let facets: Vec<(String, Vec<(TypedValue, usize)>)> = got
        .facet_counts
        .iter()
        .map(|f| (f.path.as_str().to_string(), f.values.iter().map(|v| (v.value.clone(), v.count)).collect()))
        .collect();
    check(facets == want.facets, || format!("facets {facets:?} expected {:?}", want.facets))?;
    let entities: Vec<((String, String), usize)> =
        got.entity_counts.iter().map(|e| ((e.entity.entity_type.clone(), e.entity.text.clone()), e.count)).collect();
    check(entities == want.entities, || format!("entity counts {entities:?} expected {:?}", want.entities))
}

/// Engine aggregate rows against oracle groups, in order.
pub fn compare_groups(got: &[AggregateRow], want: &[OracleGroup]) -> Result<(), String> {
    check(got.len() == want.len(), || format!("{} groups expected {}", got.len(), want.len()))?;
    for (g, w) in got.iter().zip(want) {
        check(g.group == w.group && g.inputs == w.inputs, || format!("group {g:?} expected {w:?}"))?;
        let ok = match (&w.value, &g.value) {
            (Folded::Null, None) => true,
            (Folded::Int(i), Some(TypedValue::Integer(j))) => *i == i128::from(*j),
            (Folded::Num(x), Some(v)) => v.as_f64().is_some_and(|y| close(*x, y)),
            _ => false,
        };
        check(ok, || format!("group {:?}: value {:?} expected {:?}", g.group, g.value, w.value))?;
    }
    Ok(())
}
